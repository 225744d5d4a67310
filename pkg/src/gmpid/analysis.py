"""Convergence machinery: fixed points, spectral radii, classical solvers.

Everything the detectors claim about their own behavior is checkable
here without running them:

* the data-independent variance fixed point in closed form (a stable
  quadratic solve, polished in exact rational arithmetic),
* empirical spectral radii of the mean-update operators via power
  iteration with a spectral-shift pass (operators are applied through
  their factors, never materialized),
* the asymptotic radius formulas from random matrix theory and the load
  threshold beyond which the plain detector's mean recursion contracts,
* the closed-form limit the plain detector converges to when it does,
* a generic stationary iteration x(t) = B x(t-1) + c with Jacobi and
  Richardson presets assembled for the detector's fixed-point system.
"""

from __future__ import annotations

import dataclasses
import math
from fractions import Fraction
from typing import Callable, NamedTuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve, eigvalsh

from .gmpid import (
    VERDICT_CONVERGED,
    VERDICT_DIVERGED,
    VERDICT_MAX_ITERATIONS,
    IterationOptions,
)
from .model import ChannelInstance, NumericalFault, Observation, PriorBelief, SystemConfig

__all__ = [
    "BETA_CONVERGENCE_THRESHOLD",
    "VarianceFixedPoint",
    "ConvergencePrediction",
    "ClassicalResult",
    "solve_variance_fixed_point",
    "gamma_tilde",
    "asymptotic_relaxation",
    "gmpid_asymptotic_radius",
    "sa_asymptotic_radius",
    "spectral_radius",
    "symmetric_extremes",
    "gmpid_mean_operator",
    "sa_mean_operator",
    "sa_iteration_matrix_operator",
    "mean_convergence_report",
    "gmpid_limit_formula",
    "classical_iterate",
    "jacobi_preset",
    "richardson_preset",
]

# Load factor above which the plain detector's mean recursion is
# guaranteed to contract in the large-system limit: beta > 3 + 2*sqrt(2),
# equivalently sqrt(beta) > 1 + sqrt(2).
BETA_CONVERGENCE_THRESHOLD = 3.0 + 2.0 * math.sqrt(2.0)

_DENSE_FALLBACK_LIMIT = 2000


class VarianceFixedPoint(NamedTuple):
    """Converged variance triple: decision variance, sum variance, ratio."""

    v_hat: float
    v_s: float
    gamma: float


@dataclasses.dataclass(frozen=True)
class ConvergencePrediction:
    """Everything the mean-convergence theory says about one channel."""

    rho_gmpid_empirical: float
    rho_gmpid_asymptotic: float
    rho_sa: float
    diag_dominant: bool
    beta_threshold_met: bool
    gamma: float
    v_hat: float
    v_s: float


@dataclasses.dataclass(frozen=True)
class ClassicalResult:
    solution: np.ndarray
    residual_trace: np.ndarray
    verdict: str
    iterations: int


def _polish_root(a: float, b: float, c: float, x0: float) -> float:
    """Two exact-rational Newton steps on a*x^2 + b*x + c from x0.

    The float inputs convert to Fraction losslessly, so the residual of
    the returned value is limited only by the final rounding to double.
    """
    fa, fb, fc = Fraction(a), Fraction(b), Fraction(c)
    x = Fraction(x0)
    for _ in range(2):
        slope = 2 * fa * x + fb
        if slope == 0:
            break
        x -= ((fa * x + fb) * x + fc) / slope
    return float(x)


def solve_variance_fixed_point(cfg: SystemConfig) -> VarianceFixedPoint:
    """Positive root of the variance fixed-point quadratic, plus derived ratios.

    The recursion's converged per-user variance v_hat solves

        (n_users / v) v_hat^2 + (noise_var / v + n_antennas - n_users) v_hat
            - noise_var = 0

    with v the common prior variance.  The root is taken through the
    q-form of the quadratic formula (q = -(b + sign(b) sqrt(b^2 - 4ac)) / 2)
    to avoid cancellation when n_users >> n_antennas and the noise is
    small, then polished with exact rational Newton steps so the
    residual is at the double-precision floor.  Also returns
    v_s = n_users * v_hat + noise_var and gamma = v_hat / v_s.
    """
    v = cfg.symmetric_prior_var
    a = cfg.n_users / v
    b = cfg.noise_var / v + cfg.n_antennas - cfg.n_users
    c = -cfg.noise_var
    if c == 0.0:
        v_hat = max(0.0, -b / a)
    else:
        q = -0.5 * (b + math.copysign(math.sqrt(b * b - 4.0 * a * c), b))
        root_a = q / a
        v_hat = root_a if root_a > 0.0 else c / q
        v_hat = _polish_root(a, b, c, v_hat)
    v_s = cfg.n_users * v_hat + cfg.noise_var
    if v_s > 0.0:
        gamma = v_hat / v_s
    else:
        # Noise-free underloaded corner: v_hat = v_s = 0, but the ratio
        # has the continuous limit 1 / (n_users + b) = 1 / n_antennas.
        gamma = 1.0 / cfg.n_antennas
    return VarianceFixedPoint(v_hat=v_hat, v_s=v_s, gamma=gamma)


def gamma_tilde(cfg: SystemConfig) -> float:
    """Prior-variance analogue of the converged ratio: 1/(n_users + noise_var/prior_var)."""
    return 1.0 / (cfg.n_users + cfg.noise_var / cfg.symmetric_prior_var)


def asymptotic_relaxation(cfg: SystemConfig) -> float:
    """Large-system optimal relaxation factor 1 / (1 + gamma_tilde * n_antennas)."""
    return 1.0 / (1.0 + gamma_tilde(cfg) * cfg.n_antennas)


def gmpid_asymptotic_radius(cfg: SystemConfig) -> float:
    """Large-system spectral radius of the plain mean recursion.

    gamma * n_users * (1/beta + 2/sqrt(beta)) with gamma from the
    variance fixed point; below 1 the mean recursion contracts.
    """
    gamma = solve_variance_fixed_point(cfg).gamma
    beta_inv = cfg.n_antennas / cfg.n_users
    return gamma * cfg.n_users * (beta_inv + 2.0 * math.sqrt(beta_inv))


def sa_asymptotic_radius(cfg: SystemConfig) -> float:
    """Large-system spectral radius of the relaxed recursion at the asymptotic factor."""
    gt = gamma_tilde(cfg)
    return (
        2.0
        * gt
        * math.sqrt(cfg.n_users * cfg.n_antennas)
        / (1.0 + gt * cfg.n_antennas)
    )


def _as_matvec(op, n):
    if callable(op):
        if n is None:
            raise ValueError("n must be given when the operator is a callable")
        return op, int(n)
    mat = np.asarray(op, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError("operator must be square")
    return (lambda vec: mat @ vec), mat.shape[0]


def _power_pass(matvec, n, shift, tol, max_iters, rng):
    """Dominant eigenvalue of (A - shift*I) for symmetric A.

    Power iteration with a Rayleigh-quotient estimate; stops when the
    eigen-residual ||(A - shift)v - mu v|| drops below tol * max(1, |mu|),
    which for a symmetric operator certifies an eigenvalue within the
    residual of mu.  Returns (mu, converged).
    """
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    mu = 0.0
    for _ in range(max_iters):
        av = matvec(v) - shift * v
        mu = float(v @ av)
        if np.linalg.norm(av - mu * v) <= tol * max(1.0, abs(mu)):
            return mu, True
        norm = np.linalg.norm(av)
        if norm < 1e-300:
            return 0.0, True
        v = av / norm
    return mu, False


def _dense_extremes(matvec, n):
    basis = np.eye(n)
    mat = np.column_stack([matvec(basis[:, j]) for j in range(n)])
    eigs = eigvalsh(mat)
    return float(eigs[0]), float(eigs[-1])


def symmetric_extremes(
    op,
    n: int | None = None,
    tol: float = 1e-8,
    max_iters: int = 10000,
    seed: int = 0,
    dense_fallback: bool = True,
):
    """(lambda_min, lambda_max) of a symmetric operator.

    A plain power pass finds the extreme of largest modulus; a second
    pass on the operator shifted by that value finds the eigenvalue
    farthest from it, which is the opposite extreme.  If either pass
    stalls (near-degenerate extreme pair), falls back to a dense
    eigensolve for dimensions up to 2000, else raises.
    """
    matvec, n = _as_matvec(op, n)
    rng = np.random.default_rng(seed)
    offset, ok_b = 0.0, False
    lam_a, ok_a = _power_pass(matvec, n, 0.0, tol, max_iters, rng)
    if ok_a:
        offset, ok_b = _power_pass(matvec, n, lam_a, tol, max_iters, rng)
    if not ok_a or not ok_b:
        if dense_fallback and n <= _DENSE_FALLBACK_LIMIT:
            return _dense_extremes(matvec, n)
        raise NumericalFault(
            "power iteration did not settle; spectrum extremes are near-degenerate"
        )
    lam_b = lam_a + offset
    return (min(lam_a, lam_b), max(lam_a, lam_b))


def spectral_radius(
    op,
    n: int | None = None,
    tol: float = 1e-8,
    max_iters: int = 10000,
    seed: int = 0,
    dense_fallback: bool = True,
) -> float:
    """max |eigenvalue| of a symmetric operator (matrix or matvec callable)."""
    lo, hi = symmetric_extremes(
        op, n, tol=tol, max_iters=max_iters, seed=seed, dense_fallback=dense_fallback
    )
    return max(abs(lo), abs(hi))


def gmpid_mean_operator(channel: ChannelInstance, gamma: float):
    """The plain mean-iteration matrix gamma*(H H^T - D) as a matvec.

    Returns (matvec, n_antennas); the Gram matrix is never formed.
    """
    h = channel.h
    diag = channel.gram_diag

    def matvec(vec):
        return gamma * (h @ (h.T @ vec) - diag * vec)

    return matvec, h.shape[0]


def sa_mean_operator(channel: ChannelInstance, gt: float, w: float):
    """The relaxed mean-iteration matrix I - w*A, A = gt*(H H^T - D) + I."""
    h = channel.h
    diag = channel.gram_diag

    def matvec(vec):
        return (1.0 - w) * vec - w * gt * (h @ (h.T @ vec) - diag * vec)

    return matvec, h.shape[0]


def sa_iteration_matrix_operator(channel: ChannelInstance, gt: float):
    """The relaxation-window matrix A = gt*(H H^T - D) + I as a matvec.

    Positive definite whenever the system is overloaded; its spectrum
    extremes define both the stable window (0, 2/lambda_max) and the
    radius-minimizing factor 2/(lambda_min + lambda_max).
    """
    h = channel.h
    diag = channel.gram_diag

    def matvec(vec):
        return gt * (h @ (h.T @ vec) - diag * vec) + vec

    return matvec, h.shape[0]


def _strictly_diag_dominant(channel: ChannelInstance, gamma: float) -> bool:
    """Strict row dominance of I + gamma*(H H^T - D); the diagonal is 1."""
    gram = channel.h @ channel.h.T
    off = np.abs(gram)
    np.fill_diagonal(off, 0.0)
    return bool(np.all(gamma * off.sum(axis=1) < 1.0))


def mean_convergence_report(
    channel: ChannelInstance,
    cfg: SystemConfig,
    tol: float = 1e-8,
    max_iters: int = 10000,
    seed: int = 0,
) -> ConvergencePrediction:
    """Empirical and asymptotic convergence facts for one channel.

    rho_gmpid_empirical is the exact spectral radius of the plain mean
    iteration on this channel (power iteration on the factored
    operator); rho_sa is the radius of the relaxed iteration at the
    asymptotic relaxation factor.  diag_dominant reports the strict
    row-dominance sufficient condition, beta_threshold_met the
    large-system load threshold.  Neither empirical radius below 1 is
    implied by the booleans; they are independent facts.
    """
    if (cfg.n_antennas, cfg.n_users) != channel.h.shape:
        raise ValueError("config dimensions do not match the channel")
    fixed = solve_variance_fixed_point(cfg)
    gt = gamma_tilde(cfg)
    w = asymptotic_relaxation(cfg)
    op_plain, n = gmpid_mean_operator(channel, fixed.gamma)
    rho_plain = spectral_radius(op_plain, n, tol=tol, max_iters=max_iters, seed=seed)
    op_relaxed, _ = sa_mean_operator(channel, gt, w)
    rho_relaxed = spectral_radius(op_relaxed, n, tol=tol, max_iters=max_iters, seed=seed)
    return ConvergencePrediction(
        rho_gmpid_empirical=rho_plain,
        rho_gmpid_asymptotic=gmpid_asymptotic_radius(cfg),
        rho_sa=rho_relaxed,
        diag_dominant=_strictly_diag_dominant(channel, fixed.gamma),
        beta_threshold_met=cfg.beta > BETA_CONVERGENCE_THRESHOLD,
        gamma=fixed.gamma,
        v_hat=fixed.v_hat,
        v_s=fixed.v_s,
    )


def gmpid_limit_formula(
    channel: ChannelInstance,
    obs: Observation,
    prior: PriorBelief,
    cfg: SystemConfig,
) -> np.ndarray:
    """Closed-form limit of the plain detector's mean recursion.

    Evaluates x_hat = (theta*H^T H + I)^{-1} (theta*H^T y + alpha*x_bar)
    with theta = v_hat/noise_var and alpha = v_hat/prior_var from the
    variance fixed point.  The same point is recomputed through the
    antenna-space route x* = ((1 - gamma*n_users) I + gamma*H H^T)^{-1}
    (y - alpha*H x_bar), x_hat = gamma*H^T x* + alpha*x_bar; the two are
    equal by the matrix inversion lemma and the run asserts their
    agreement to 1e-10 as a self-check.
    """
    if not cfg.noise_var > 0.0:
        raise ValueError("the limit formula needs noise_var > 0")
    if (cfg.n_antennas, cfg.n_users) != channel.h.shape:
        raise ValueError("config dimensions do not match the channel")
    fixed = solve_variance_fixed_point(cfg)
    v = cfg.symmetric_prior_var
    theta = fixed.v_hat / cfg.noise_var
    alpha = fixed.v_hat / v
    h = channel.h
    nr, nu = h.shape

    a_user = theta * (h.T @ h)
    a_user[np.diag_indices(nu)] += 1.0
    x_hat = cho_solve(
        cho_factor(a_user, lower=True), theta * (h.T @ obs.y) + alpha * prior.mean
    )

    a_ant = fixed.gamma * (h @ h.T)
    a_ant[np.diag_indices(nr)] += 1.0 - fixed.gamma * nu
    x_star = cho_solve(cho_factor(a_ant, lower=True), obs.y - alpha * (h @ prior.mean))
    x_hat_alt = fixed.gamma * (h.T @ x_star) + alpha * prior.mean

    scale = max(1.0, float(np.max(np.abs(x_hat))))
    if float(np.max(np.abs(x_hat - x_hat_alt))) > 1e-10 * scale:
        raise NumericalFault("the two closed-form limit routes disagree")
    return x_hat


def classical_iterate(
    b_operator: Callable[[np.ndarray], np.ndarray],
    c: np.ndarray,
    opts: IterationOptions = IterationOptions(),
    callback: Callable[[int, np.ndarray], None] | None = None,
) -> ClassicalResult:
    """Stationary iteration x(t) = B x(t-1) + c from x(0) = 0.

    The per-step change B x + c - x is exactly the residual of the
    fixed-point system (I - B) x = c at the current iterate, so the
    stop rule ||change|| < opts.tol (absolute Euclidean norm) doubles
    as the residual contract of the returned solution.  callback, when
    given, observes (iteration, iterate) after every step.
    """
    c = np.asarray(c, dtype=float)
    x = np.zeros_like(c)
    trace = []
    verdict = VERDICT_MAX_ITERATIONS
    iterations = 0
    for t in range(1, opts.max_iters + 1):
        x_next = b_operator(x) + c
        iterations = t
        if not np.all(np.isfinite(x_next)) or np.max(np.abs(x_next)) > opts.divergence_threshold:
            verdict = VERDICT_DIVERGED
            if np.all(np.isfinite(x_next)):
                x = x_next
            break
        residual = float(np.linalg.norm(x_next - x))
        trace.append(residual)
        x = x_next
        if callback is not None:
            callback(t, x)
        if residual < opts.tol:
            verdict = VERDICT_CONVERGED
            break
    return ClassicalResult(
        solution=x,
        residual_trace=np.asarray(trace, dtype=float),
        verdict=verdict,
        iterations=iterations,
    )


def _fixed_point_system(channel, obs, prior, cfg):
    """Factored A x = b for the detector's limit system A = theta*H^T H + I."""
    fixed = solve_variance_fixed_point(cfg)
    theta = fixed.v_hat / cfg.noise_var
    alpha = fixed.v_hat / cfg.symmetric_prior_var
    h = channel.h

    def apply_a(vec):
        return theta * (h.T @ (h @ vec)) + vec

    b = theta * (h.T @ obs.y) + alpha * prior.mean
    col_energy = np.einsum("mk,mk->k", h, h)
    diag_a = theta * col_energy + 1.0
    return apply_a, b, diag_a


def jacobi_preset(
    channel: ChannelInstance,
    obs: Observation,
    prior: PriorBelief,
    cfg: SystemConfig,
):
    """(b_operator, c) of the Jacobi split for the limit system.

    x(t) = x(t-1) - D^{-1}(A x(t-1) - b) with D = diag(A); converges
    exactly when the spectral radius of I - D^{-1}A is below one, which
    overloaded channels generally violate (a useful divergent baseline).
    """
    apply_a, b, diag_a = _fixed_point_system(channel, obs, prior, cfg)

    def b_operator(vec):
        return vec - apply_a(vec) / diag_a

    return b_operator, b / diag_a


def richardson_preset(
    channel: ChannelInstance,
    obs: Observation,
    prior: PriorBelief,
    cfg: SystemConfig,
    omega: float | None = None,
    tol: float = 1e-8,
    max_iters: int = 10000,
    seed: int = 0,
):
    """(b_operator, c, omega) of the relaxed Richardson split x(t) = (I - omega*A)x + omega*b.

    When omega is not given it is set to the radius-minimizing
    2/(lambda_min + lambda_max) of A = theta*H^T H + I.  For overloaded
    channels H^T H is singular, so lambda_min = 1 exactly; lambda_max
    comes from a power pass on the factored operator.
    """
    apply_a, b, _ = _fixed_point_system(channel, obs, prior, cfg)
    nu = channel.n_users
    if omega is None:
        if channel.n_users > channel.n_antennas:
            rng = np.random.default_rng(seed)
            lam_max, ok = _power_pass(apply_a, nu, 0.0, tol, max_iters, rng)
            if not ok:
                _, lam_max = _dense_extremes(apply_a, nu)
            lam_min = 1.0
        else:
            lam_min, lam_max = symmetric_extremes(
                apply_a, nu, tol=tol, max_iters=max_iters, seed=seed
            )
        omega = 2.0 / (lam_min + lam_max)
    omega = float(omega)

    def b_operator(vec):
        return vec - omega * apply_a(vec)

    return b_operator, omega * b, omega
