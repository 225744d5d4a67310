"""Shared reference implementations for the update-rule tests.

Everything here is written as plain scalar loops over edges, directly
off the update definitions, with no vectorization and no reuse of the
package's internals.  The real modules must reproduce these numbers;
the loops being slow is fine because they only run at toy sizes.
"""

import numpy as np


def ref_sum_update(x_v, prec_v, h, y, noise_var):
    """Loop form of the sum-node sweep (no user exclusion on either line)."""
    nr, nu = h.shape
    x_s = np.empty((nr, nu))
    var_s = np.empty((nr, nu))
    for m in range(nr):
        mean = y[m]
        var = noise_var
        blocked = False
        for i in range(nu):
            mean -= h[m, i] * x_v[i, m]
            if h[m, i] != 0.0:
                if prec_v[i, m] == 0.0:
                    blocked = True
                else:
                    var += h[m, i] ** 2 / prec_v[i, m]
        for k in range(nu):
            x_s[m, k] = mean
            var_s[m, k] = np.inf if blocked else var
    return x_s, var_s


def ref_variable_update(x_s, var_s, h, prior_mean, prior_var):
    """Loop form of the variable-node sweep (antenna m excluded)."""
    nr, nu = h.shape
    x_v = np.empty((nu, nr))
    prec_v = np.empty((nu, nr))
    for k in range(nu):
        for m in range(nr):
            prec = 1.0 / prior_var[k]
            numer = prior_mean[k] / prior_var[k]
            for i in range(nr):
                if i == m or not np.isfinite(var_s[i, k]):
                    continue
                prec += h[i, k] ** 2 / var_s[i, k]
                numer += h[i, k] * x_s[i, k] / var_s[i, k]
            prec_v[k, m] = prec
            x_v[k, m] = numer / prec
    return x_v, prec_v


def ref_decide(x_s, var_s, h, prior_mean, prior_var):
    """Loop form of the posterior decision (all antennas plus prior)."""
    nr, nu = h.shape
    mean = np.empty(nu)
    var = np.empty(nu)
    for k in range(nu):
        prec = 1.0 / prior_var[k]
        numer = prior_mean[k] / prior_var[k]
        for m in range(nr):
            if not np.isfinite(var_s[m, k]):
                continue
            prec += h[m, k] ** 2 / var_s[m, k]
            numer += h[m, k] * x_s[m, k] / var_s[m, k]
        var[k] = 1.0 / prec
        mean[k] = numer / prec
    return mean, var


def ref_sa_sum_update(x_v, prec_v, x_s_old, h_scaled, y_scaled, noise_var, w):
    """Loop form of the relaxed sum-node sweep with the memory term.

    The variance line uses the unscaled squared channel h_scaled^2 / w.
    """
    nr, nu = h_scaled.shape
    x_s = np.empty((nr, nu))
    var_s = np.empty((nr, nu))
    for m in range(nr):
        mean = y_scaled[m]
        var = noise_var
        blocked = False
        for i in range(nu):
            mean -= h_scaled[m, i] * x_v[i, m]
            if h_scaled[m, i] != 0.0:
                if prec_v[i, m] == 0.0:
                    blocked = True
                else:
                    var += (h_scaled[m, i] ** 2 / w) / prec_v[i, m]
        for k in range(nu):
            x_s[m, k] = mean - (w - 1.0) * x_s_old[m, k]
            var_s[m, k] = np.inf if blocked else var
    return x_s, var_s


def ref_sa_variable_update(x_s, var_s, h_scaled, prior_mean, prior_var, vbar_s, w):
    """Loop form of the relaxed variable-node sweep.

    Means use the frozen weights (prior variances and the prior-level
    sum variances vbar_s); the variance line matches the plain sweep on
    the unscaled squared channel.
    """
    nr, nu = h_scaled.shape
    x_v = np.empty((nu, nr))
    prec_v = np.empty((nu, nr))
    for k in range(nu):
        for m in range(nr):
            numer = prior_mean[k] / prior_var[k]
            prec = 1.0 / prior_var[k]
            for i in range(nr):
                if i == m:
                    continue
                numer += h_scaled[i, k] * x_s[i, k] / vbar_s[i]
                if np.isfinite(var_s[i, k]):
                    prec += (h_scaled[i, k] ** 2 / w) / var_s[i, k]
            x_v[k, m] = prior_var[k] * numer
            prec_v[k, m] = prec
    return x_v, prec_v


def dense_lmmse(h, y, prior_mean, prior_var, noise_var):
    """Textbook dense LMMSE posterior via an explicit matrix inverse."""
    cov = np.linalg.inv(h.T @ h / noise_var + np.diag(1.0 / prior_var))
    mean = cov @ (h.T @ y / noise_var + prior_mean / prior_var)
    return mean, np.diag(cov).copy()
