"""Problem primitives for overloaded multiuser Gaussian linear models.

Everything in this package works on the real-valued observation model

    y = H x + n,

where H is an n_antennas x n_users channel matrix with iid standard
normal entries, x carries one symbol per user, and n is white Gaussian
noise.  The interesting regime is the overloaded one, n_users >
n_antennas, where the channel Gram matrix is singular and detection has
to lean on the Gaussian priors.

This module holds the shared value types (configuration, channel
instance, observation, prior, scalar Gaussian message) plus the
instance generator and the basic Gaussian belief algebra.  Detectors
and analysis tools live in their own modules and only consume what is
defined here.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

__all__ = [
    "DetectorError",
    "NumericalFault",
    "NonInformativeObservation",
    "SystemConfig",
    "ChannelInstance",
    "PriorBelief",
    "Observation",
    "GaussianMessage",
    "PRIOR_MODE_UNINFORMATIVE",
    "PRIOR_MODE_GENIE_NOISY",
    "generate_instance",
    "gaussian_product",
    "combine_extrinsic",
    "mse",
]

PRIOR_MODE_UNINFORMATIVE = "uninformative"
PRIOR_MODE_GENIE_NOISY = "genie-noisy"

_PRIOR_MODES = (PRIOR_MODE_UNINFORMATIVE, PRIOR_MODE_GENIE_NOISY)


class DetectorError(Exception):
    """Base class for errors raised by this package."""


class NumericalFault(DetectorError):
    """A numerical invariant failed (non-finite values, bad residual, ...)."""


class NonInformativeObservation(DetectorError):
    """An extrinsic belief was requested where the data carries no information."""


def _frozen_vector(values, n: int, name: str) -> np.ndarray:
    """Coerce scalar-or-vector input to a read-only float vector of length n."""
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 0:
        arr = np.full(n, float(arr))
    if arr.shape != (n,):
        raise ValueError(f"{name} must be a scalar or a length-{n} vector, got shape {arr.shape}")
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclasses.dataclass(frozen=True)
class SystemConfig:
    """Static description of one detection scenario.

    Parameters
    ----------
    n_users, n_antennas:
        Problem dimensions.  The package targets the overloaded case
        n_users > n_antennas but the model itself does not require it.
    noise_var:
        Variance of each additive noise sample.  Zero is allowed and
        produces a noiseless observation.
    prior_var:
        Prior variance per user.  A scalar is broadcast to all users.
    source_var:
        Variance used to draw the true symbols.
    seed:
        Seed for the instance generator.
    """

    n_users: int
    n_antennas: int
    noise_var: float
    prior_var: np.ndarray = 1.0
    source_var: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if int(self.n_users) < 1 or int(self.n_antennas) < 1:
            raise ValueError("n_users and n_antennas must be positive integers")
        object.__setattr__(self, "n_users", int(self.n_users))
        object.__setattr__(self, "n_antennas", int(self.n_antennas))
        if not math.isfinite(self.noise_var) or self.noise_var < 0.0:
            raise ValueError("noise_var must be finite and >= 0")
        object.__setattr__(self, "noise_var", float(self.noise_var))
        pv = _frozen_vector(self.prior_var, self.n_users, "prior_var")
        if not np.all(np.isfinite(pv)) or np.any(pv <= 0.0):
            raise ValueError("prior_var entries must be finite and > 0")
        object.__setattr__(self, "prior_var", pv)
        if not math.isfinite(self.source_var) or self.source_var <= 0.0:
            raise ValueError("source_var must be finite and > 0")
        object.__setattr__(self, "source_var", float(self.source_var))
        object.__setattr__(self, "seed", int(self.seed))
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    @property
    def beta(self) -> float:
        """Load factor n_users / n_antennas."""
        return self.n_users / self.n_antennas

    @property
    def symmetric_prior_var(self) -> float:
        """The common prior variance, for closed-form predictors.

        Raises ValueError when users carry unequal prior variances, since
        the single-variance formulas do not apply there.
        """
        v0 = float(self.prior_var[0])
        if np.any(self.prior_var != v0):
            raise ValueError("closed-form predictors need a common prior variance for all users")
        return v0

    def with_prior_var(self, prior_var) -> "SystemConfig":
        return dataclasses.replace(self, prior_var=prior_var)

    def with_seed(self, seed: int) -> "SystemConfig":
        return dataclasses.replace(self, seed=seed)


@dataclasses.dataclass(frozen=True)
class ChannelInstance:
    """One realized channel matrix with cached per-antenna energy.

    gram_diag[m] is the squared norm of row m of h, i.e. the diagonal of
    h h^T.  It shows up in every message-passing variance line, so it is
    computed once at construction.
    """

    h: np.ndarray
    gram_diag: np.ndarray

    def __post_init__(self):
        h = np.ascontiguousarray(np.asarray(self.h, dtype=float))
        if h.ndim != 2:
            raise ValueError("channel matrix must be two dimensional")
        if not np.all(np.isfinite(h)):
            raise NumericalFault("channel matrix contains non-finite entries")
        h.setflags(write=False)
        object.__setattr__(self, "h", h)
        gd = np.ascontiguousarray(np.asarray(self.gram_diag, dtype=float))
        ref = np.einsum("mk,mk->m", h, h)
        scale = max(1.0, float(np.max(ref, initial=0.0)))
        if gd.shape != ref.shape or np.max(np.abs(gd - ref), initial=0.0) > 1e-12 * scale:
            raise NumericalFault("gram_diag is inconsistent with the channel matrix")
        gd.setflags(write=False)
        object.__setattr__(self, "gram_diag", gd)

    @classmethod
    def from_matrix(cls, h) -> "ChannelInstance":
        h = np.asarray(h, dtype=float)
        return cls(h=h, gram_diag=np.einsum("mk,mk->m", h, h))

    @property
    def n_antennas(self) -> int:
        return self.h.shape[0]

    @property
    def n_users(self) -> int:
        return self.h.shape[1]


@dataclasses.dataclass(frozen=True)
class PriorBelief:
    """Per-user Gaussian prior, mean and variance vectors."""

    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        mean = np.ascontiguousarray(np.asarray(self.mean, dtype=float))
        var = np.ascontiguousarray(np.asarray(self.var, dtype=float))
        if mean.ndim != 1 or mean.shape != var.shape:
            raise ValueError("prior mean and var must be vectors of equal length")
        if not np.all(np.isfinite(mean)):
            raise ValueError("prior mean must be finite")
        if not np.all(np.isfinite(var)) or np.any(var <= 0.0):
            raise ValueError("prior variances must be finite and > 0")
        mean.setflags(write=False)
        var.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "var", var)


@dataclasses.dataclass(frozen=True)
class Observation:
    """Received vector plus the true symbols (kept only for scoring)."""

    y: np.ndarray
    x_true: np.ndarray

    def __post_init__(self):
        y = np.ascontiguousarray(np.asarray(self.y, dtype=float))
        x = np.ascontiguousarray(np.asarray(self.x_true, dtype=float))
        if y.ndim != 1 or x.ndim != 1:
            raise ValueError("observation fields must be vectors")
        y.setflags(write=False)
        x.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x_true", x)


@dataclasses.dataclass(frozen=True)
class GaussianMessage:
    """Scalar Gaussian belief in precision form.

    Precision zero encodes the flat (non-informative) belief; its mean is
    kept at whatever was supplied but carries no weight in products.
    """

    mean: float
    precision: float

    def __post_init__(self):
        object.__setattr__(self, "mean", float(self.mean))
        object.__setattr__(self, "precision", float(self.precision))
        if math.isnan(self.precision) or self.precision < 0.0:
            raise ValueError("precision must be >= 0")

    @property
    def var(self) -> float:
        return math.inf if self.precision == 0.0 else 1.0 / self.precision


def generate_instance(cfg: SystemConfig, prior_mode: str = PRIOR_MODE_UNINFORMATIVE):
    """Draw one (channel, observation, prior) triple from cfg.

    The channel entries are iid standard normal.  A draw with an all-zero
    antenna row would make that measurement meaningless, so such draws are
    rejected and redrawn (the event has probability zero for continuous
    entries; the guard exists for pathological generators and tiny sizes).

    prior_mode selects how the prior means are produced:

    * "uninformative": zero means, so the prior only regularizes scale.
    * "genie-noisy": means are the true symbols plus noise of the prior
      variance, i.e. the prior is a correct model of its own quality.
      This mode keeps iterative detectors honest when the load is high.

    Returns (ChannelInstance, Observation, PriorBelief).  All randomness
    comes from a generator seeded with cfg.seed, so equal configs give
    bitwise equal instances.
    """
    if prior_mode not in _PRIOR_MODES:
        raise ValueError(f"unknown prior_mode {prior_mode!r}, expected one of {_PRIOR_MODES}")
    rng = np.random.default_rng(cfg.seed)
    h = rng.standard_normal((cfg.n_antennas, cfg.n_users))
    while np.any(np.all(h == 0.0, axis=1)):
        h = rng.standard_normal((cfg.n_antennas, cfg.n_users))
    x_true = math.sqrt(cfg.source_var) * rng.standard_normal(cfg.n_users)
    noise = math.sqrt(cfg.noise_var) * rng.standard_normal(cfg.n_antennas)
    y = h @ x_true + noise
    if prior_mode == PRIOR_MODE_GENIE_NOISY:
        mean = x_true + np.sqrt(cfg.prior_var) * rng.standard_normal(cfg.n_users)
    else:
        mean = np.zeros(cfg.n_users)
    channel = ChannelInstance.from_matrix(h)
    obs = Observation(y=y, x_true=x_true)
    prior = PriorBelief(mean=mean, var=cfg.prior_var)
    return channel, obs, prior


def gaussian_product(a: GaussianMessage, b: GaussianMessage) -> GaussianMessage:
    """Pointwise product of two scalar Gaussian beliefs.

    Precisions add; the mean is the precision-weighted average.  The
    product of two flat beliefs stays flat with mean zero.
    """
    precision = a.precision + b.precision
    if precision == 0.0:
        return GaussianMessage(mean=0.0, precision=0.0)
    mean = (a.precision * a.mean + b.precision * b.mean) / precision
    return GaussianMessage(mean=mean, precision=precision)


def combine_extrinsic(posterior: GaussianMessage, prior: GaussianMessage) -> GaussianMessage:
    """Divide the prior back out of a posterior belief.

    Solves gaussian_product(result, prior) == posterior for result.  When
    the posterior is no sharper than the prior the data contributed
    nothing (or the inputs are inconsistent) and there is no valid
    extrinsic belief, so NonInformativeObservation is raised.
    """
    precision = posterior.precision - prior.precision
    if precision <= 0.0:
        raise NonInformativeObservation(
            "posterior precision does not exceed prior precision; no extrinsic belief exists"
        )
    mean = (posterior.precision * posterior.mean - prior.precision * prior.mean) / precision
    return GaussianMessage(mean=mean, precision=precision)


def mse(estimate: np.ndarray, truth: np.ndarray) -> float:
    """Mean squared error between two equal-length vectors."""
    estimate = np.asarray(estimate, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if estimate.shape != truth.shape:
        raise ValueError("estimate and truth must have equal shapes")
    diff = estimate - truth
    return float(diff @ diff / diff.size)
