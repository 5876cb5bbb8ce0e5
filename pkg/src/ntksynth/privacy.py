"""Gaussian-mechanism noise calibration and release bookkeeping.

Two calibration routes for the noise multiplier sigma given (epsilon, delta):
the classical closed form sqrt(2 log(1.25/delta))/epsilon (valid for
epsilon <= 1 only) and the exact analytic condition

    delta(sigma; eps) = Phi(1/(2 sigma) - eps sigma) - e^eps Phi(-1/(2 sigma) - eps sigma)

for a unit-sensitivity release, solved for the smallest sigma by bisection.
The analytic route is never larger than the classical one.

A release adds N(0, (sigma * sensitivity)^2) noise per entry. The pipeline
releases exactly one statistic; :class:`ReleaseLog` exists to make a second
release under the same budget label a hard programmer error rather than a
silent privacy bug.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from ntksynth.tensor import Rng, Tensor

__all__ = [
    "CalibrationError", "DoubleReleaseError", "PrivacyParams", "ReleaseLog",
    "classical_sigma", "analytic_sigma", "analytic_delta", "calibrate",
    "gaussian_mechanism",
]

MAX_BISECTION_ITERS = 200
_BRACKET_LO, _BRACKET_HI = 1e-4, 1e4


class CalibrationError(RuntimeError):
    """Sigma search failed to bracket or converge."""


class DoubleReleaseError(RuntimeError):
    """A budget label was released twice."""


@dataclass(frozen=True)
class PrivacyParams:
    """An (epsilon, delta) guarantee with its calibrated noise multiplier.

    ``sensitivity`` is fixed at release time; released noise has per-entry
    std ``sigma * sensitivity``. ``calibration`` records which route
    produced sigma ("classical", "analytic", or "none" for non-private runs).
    """

    epsilon: float
    delta: float
    sigma: float
    sensitivity: float
    calibration: str

    def __post_init__(self):
        if self.calibration not in ("classical", "analytic", "none"):
            raise ValueError(f"unknown calibration {self.calibration!r}")
        if self.calibration != "none":
            if not self.epsilon > 0:
                raise ValueError("epsilon must be positive")
            if not 0 < self.delta < 1:
                raise ValueError("delta must lie in (0, 1)")
            if not self.sigma > 0:
                raise ValueError("sigma must be positive")
        if self.sensitivity < 0:
            raise ValueError("sensitivity must be non-negative")

    @property
    def noise_std(self) -> float:
        return self.sigma * self.sensitivity


def classical_sigma(epsilon: float, delta: float) -> float:
    """Closed-form noise multiplier sqrt(2 log(1.25/delta))/epsilon.

    Only sufficient for epsilon <= 1; larger epsilon is rejected.
    """
    if not 0 < epsilon <= 1:
        raise ValueError(f"classical calibration needs 0 < epsilon <= 1, got {epsilon}")
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    return math.sqrt(2.0 * math.log(1.25 / delta)) / epsilon


def _log_sub(x: float, y: float) -> float:
    """Stable log(exp(x) - exp(y)) for y <= x."""
    if y >= x:
        return -math.inf
    return x + math.log1p(-math.exp(y - x))


def analytic_delta(sigma: float, epsilon: float) -> float:
    """delta achieved by a unit-sensitivity Gaussian release at this sigma.

    Monotone decreasing in sigma; evaluated in log space so the e^eps
    factor cannot overflow.
    """
    a = stats.norm.logcdf(1.0 / (2.0 * sigma) - epsilon * sigma)
    b = epsilon + stats.norm.logcdf(-1.0 / (2.0 * sigma) - epsilon * sigma)
    return math.exp(_log_sub(a, b))


def analytic_sigma(epsilon: float, delta: float, rel_tol: float = 1e-9) -> float:
    """Smallest sigma whose analytic delta(sigma; eps) is at most delta.

    Bisection over a geometric bracket, to ``rel_tol`` relative width.
    """
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")

    lo, hi = _BRACKET_LO, _BRACKET_HI
    expansions = 0
    while analytic_delta(lo, epsilon) < delta:  # root below lo: shrink
        hi, lo = lo, lo / 10.0
        expansions += 1
        if expansions > 20:
            raise CalibrationError("failed to bracket sigma from below")
    expansions = 0
    while analytic_delta(hi, epsilon) > delta:
        lo, hi = hi, hi * 10.0
        expansions += 1
        if expansions > 20:
            raise CalibrationError("failed to bracket sigma from above")

    for _ in range(MAX_BISECTION_ITERS):
        mid = 0.5 * (lo + hi)
        if analytic_delta(mid, epsilon) > delta:
            lo = mid
        else:
            hi = mid
        if (hi - lo) <= rel_tol * hi:
            return hi
    raise CalibrationError(
        f"sigma bisection did not converge in {MAX_BISECTION_ITERS} iterations")


def calibrate(epsilon: float, delta: float, sensitivity: float,
              method: str = "analytic") -> PrivacyParams:
    """Build PrivacyParams for one release of the given sensitivity."""
    if method == "classical":
        sigma = classical_sigma(epsilon, delta)
    elif method == "analytic":
        sigma = analytic_sigma(epsilon, delta)
    else:
        raise ValueError(f"unknown calibration method {method!r}")
    return PrivacyParams(epsilon=epsilon, delta=delta, sigma=sigma,
                         sensitivity=sensitivity, calibration=method)


def gaussian_mechanism(value: Tensor | np.ndarray, sensitivity: float,
                       sigma: float, rng: Rng) -> np.ndarray:
    """value + i.i.d. N(0, (sigma*sensitivity)^2) noise per entry."""
    if sensitivity < 0:
        raise ValueError("sensitivity must be non-negative")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    data = value.data if isinstance(value, Tensor) else np.asarray(value, dtype=np.float64)
    if sensitivity == 0:
        return data.copy()
    return data + sigma * sensitivity * rng.normal(data.shape)


@dataclass
class ReleaseLog:
    """Record of released budget labels; re-release of a label raises."""

    entries: dict[str, PrivacyParams] = field(default_factory=dict)

    def record(self, label: str, params: PrivacyParams):
        if label in self.entries:
            raise DoubleReleaseError(
                f"budget label {label!r} was already released; reuse the released "
                "value instead of releasing again")
        self.entries[label] = params
