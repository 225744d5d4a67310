"""Exact linear MMSE detection and its closed-form average performance.

The LMMSE estimate solves the Gaussian posterior exactly,

    (H^T H / noise_var + diag(1 / prior_var)) x_hat
        = H^T y / noise_var + prior_mean / prior_var,

with per-user posterior variances on the diagonal of the inverse of the
same matrix.  It is the oracle every iterative detector in this package
is measured against, and it is also the cost yardstick: lmmse_detect
reports a multiplication count with cubic growth in n_users, while the
message-passing detectors pay a fixed small multiple of
n_users * n_antennas per sweep.

predict_mmse_mse gives the large-system average of the per-user
posterior variance in closed form.  For equal prior variances the
average MSE concentrates, so the formula is a tight prediction already
at a few hundred users.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from .model import ChannelInstance, NumericalFault, Observation, PriorBelief, SystemConfig

__all__ = ["LmmseResult", "lmmse_detect", "predict_mmse_mse"]

_RESIDUAL_RTOL = 1e-10


@dataclasses.dataclass(frozen=True)
class LmmseResult:
    """Exact posterior for one instance.

    mul_count is a closed-form tally of the floating multiplications the
    chosen factorization path performs (Gram matrix, Cholesky, solves,
    diagonal of the inverse).  It is bookkeeping for cost comparisons,
    not a measurement.
    """

    posterior_mean: np.ndarray
    posterior_var: np.ndarray
    mul_count: int


def _mul_count(n_users: int, n_antennas: int) -> int:
    nu, nr = n_users, n_antennas
    gram = nr * nu * (nu + 1) // 2          # symmetric H^T H, upper triangle
    proj = nu * nr                          # H^T y
    scale = nu * (nu + 1) // 2 + nu         # divide both by noise_var
    prior = 2 * nu                          # prior precision and its mean term
    chol = nu**3 // 6 + nu**2 // 2          # Cholesky of the posterior precision
    solves = 2 * nu**2                      # forward + back substitution
    inv_diag = nu**3 // 6 + nu * (nu + 1) // 2   # L^{-1}, then column norms
    check = nu**2                           # residual verification
    return gram + proj + scale + prior + chol + solves + inv_diag + check


def lmmse_detect(
    channel: ChannelInstance,
    obs: Observation,
    prior: PriorBelief,
    noise_var: float,
) -> LmmseResult:
    """Exact Gaussian posterior mean and per-user variance.

    Requires noise_var > 0 (the posterior precision would be singular or
    ill-defined otherwise in the overloaded regime).  The solution is
    verified against its normal equations; a relative residual above
    1e-10 raises NumericalFault instead of returning a silently bad
    estimate.
    """
    if not noise_var > 0.0:
        raise ValueError("lmmse_detect needs noise_var > 0")
    h = channel.h
    nr, nu = h.shape
    if obs.y.shape != (nr,) or prior.mean.shape != (nu,):
        raise ValueError("instance shapes are inconsistent")

    prior_prec = 1.0 / prior.var
    a = h.T @ h / noise_var
    a[np.diag_indices(nu)] += prior_prec
    b = h.T @ obs.y / noise_var + prior_prec * prior.mean

    c, lower = cho_factor(a, lower=True)
    x_hat = cho_solve((c, lower), b)

    l_inv = solve_triangular(np.tril(c), np.eye(nu), lower=True)
    posterior_var = np.einsum("jk,jk->k", l_inv, l_inv)

    residual = a @ x_hat - b
    scale = max(float(np.linalg.norm(b)), 1e-300)
    if not np.all(np.isfinite(x_hat)) or float(np.linalg.norm(residual)) > _RESIDUAL_RTOL * scale:
        raise NumericalFault("normal-equation residual exceeds the LMMSE accuracy contract")

    return LmmseResult(
        posterior_mean=x_hat,
        posterior_var=posterior_var,
        mul_count=_mul_count(nu, nr),
    )


def predict_mmse_mse(cfg: SystemConfig) -> float:
    """Closed-form large-system average posterior variance per user.

    With a common prior variance v and snr = v / noise_var, the average
    of the LMMSE posterior variances converges, as both dimensions grow
    at fixed load beta = n_users / n_antennas, to

        v - noise_var / (4 n_users)
              * (sqrt(snr n_antennas (1 + sqrt(beta))^2 + 1)
                 - sqrt(snr n_antennas (1 - sqrt(beta))^2 + 1))^2.

    The value always lies strictly between 0 and v, and it coincides
    exactly with the positive root of the quadratic fixed-point equation
    solved in the analysis module.  Requires noise_var > 0 and a common
    prior variance.
    """
    if not cfg.noise_var > 0.0:
        raise ValueError("predict_mmse_mse needs noise_var > 0")
    v = cfg.symmetric_prior_var
    snr = v / cfg.noise_var
    root_beta = math.sqrt(cfg.n_users / cfg.n_antennas)
    term = snr * cfg.n_antennas
    spread = math.sqrt(term * (1.0 + root_beta) ** 2 + 1.0) - math.sqrt(
        term * (1.0 - root_beta) ** 2 + 1.0
    )
    return v - cfg.noise_var / (4.0 * cfg.n_users) * spread**2
