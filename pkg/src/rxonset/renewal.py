"""Likelihoods and maximum-likelihood fitting for the two renewal models.

Two inter-arrival distributions are supported: the exponential (the
homogeneous-Poisson null for sporadic prescribing, constant hazard) and
the two-parameter Weibull (sustained therapy, where the shape parameter
acts as a regularity index and the scale sets the characteristic refill
interval).

Integer-day inter-arrival times are treated as continuous values; refill
intervals are long enough (roughly 100-350 days) that day rounding is
negligible. Log-likelihood sums use ``math.fsum`` so a segment's value
does not depend on how the segment was sliced, which the change-point
scan relies on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SHAPE_BRACKET = (0.01, 50.0)
FIT_TOL = 1e-8
FIT_MAX_ITER = 100


class FitError(ValueError):
    """Maximum-likelihood fit failed; carries the last shape iterate."""

    def __init__(self, message: str, last_shape: float | None = None):
        super().__init__(message)
        self.last_shape = last_shape


class DegenerateDataError(FitError):
    """All intervals equal: the Weibull shape estimate diverges."""


@dataclass(frozen=True)
class ExpParams:
    """Exponential inter-arrival model: per-day Poisson intensity."""

    rate: float

    def __post_init__(self):
        if not (self.rate > 0 and math.isfinite(self.rate)):
            raise ValueError(f"rate must be positive and finite, got {self.rate}")


@dataclass(frozen=True)
class WeibullParams:
    """Weibull inter-arrival model.

    shape: regularity index k (k ~ 1 memoryless, k > 1 regular refills,
    k < 1 bursty); scale: characteristic refill interval in days.
    """

    shape: float
    scale: float

    def __post_init__(self):
        for name, value in (("shape", self.shape), ("scale", self.scale)):
            if not (value > 0 and math.isfinite(value)):
                raise ValueError(f"{name} must be positive and finite, got {value}")

    def mean_interval(self) -> float:
        return self.scale * math.gamma(1.0 + 1.0 / self.shape)


def _check_taus(taus) -> None:
    for tau in taus:
        if tau <= 0:
            raise ValueError(f"inter-arrival times must be positive, got {tau}")


def exp_loglik(taus, params: ExpParams) -> float:
    """Sum of exponential log-densities; empty input gives 0.0.

    Closed form n*log(rate) - rate*sum(tau): on integer-day taus the
    inner sum is exact, so the value is identical however the caller
    split the sequence.
    """
    _check_taus(taus)
    n = len(taus)
    if n == 0:
        return 0.0
    return n * math.log(params.rate) - params.rate * math.fsum(taus)


def fit_exponential(taus) -> ExpParams:
    """Closed-form MLE: rate = n / sum(tau)."""
    if len(taus) == 0:
        raise ValueError("cannot fit exponential to an empty sample")
    _check_taus(taus)
    return ExpParams(rate=len(taus) / math.fsum(taus))


def weibull_logpdf(tau: float, params: WeibullParams) -> float:
    """Log-density of a single inter-arrival time."""
    log_ratio = math.log(tau) - math.log(params.scale)
    return (
        math.log(params.shape / params.scale)
        + (params.shape - 1.0) * log_ratio
        - math.exp(params.shape * log_ratio)
    )


def weibull_loglik(taus, params: WeibullParams) -> float:
    """Sum of Weibull log-densities; empty input gives 0.0.

    At shape = 1 this reduces to exp_loglik with rate 1/scale.
    """
    _check_taus(taus)
    if len(taus) == 0:
        return 0.0
    return math.fsum(weibull_logpdf(t, params) for t in taus)


def _shape_score(k: float, norm_pow_base: np.ndarray, log_t: np.ndarray, mean_log: float):
    """Profile score g(k) and its derivative; g is strictly increasing.

    Powers are taken on tau/max(tau) so they stay in (0, 1] for any k in
    the search bracket; the normalization cancels in the ratio.
    """
    w = norm_pow_base**k
    s0 = float(w.sum())
    s1 = float((w * log_t).sum())
    s2 = float((w * log_t * log_t).sum())
    g = s1 / s0 - 1.0 / k - mean_log
    gprime = (s2 * s0 - s1 * s1) / (s0 * s0) + 1.0 / (k * k)
    return g, gprime


def fit_weibull(taus, tol: float = FIT_TOL, max_iter: int = FIT_MAX_ITER) -> WeibullParams:
    """Profile-likelihood MLE for (shape, scale).

    Solves the shape score equation by Newton iteration safeguarded with
    bisection on the bracket SHAPE_BRACKET, then sets
    scale = (mean(tau^k))^(1/k). Convergence is |dk| < tol within
    max_iter iterations.

    Raises DegenerateDataError for all-equal samples (shape diverges) and
    FitError, carrying the last iterate, when no root lies in the bracket
    or the iteration fails to converge.
    """
    arr = np.asarray(taus, dtype=np.float64)
    if arr.size < 2:
        raise FitError(f"need at least 2 intervals to fit, got {arr.size}")
    if arr.min() <= 0:
        raise ValueError("inter-arrival times must be positive")
    if np.all(arr == arr[0]):
        raise DegenerateDataError("all intervals equal; shape estimate diverges")

    log_t = np.log(arr)
    mean_log = float(log_t.mean())
    base = arr / arr.max()
    lo, hi = SHAPE_BRACKET
    g_lo, _ = _shape_score(lo, base, log_t, mean_log)
    g_hi, _ = _shape_score(hi, base, log_t, mean_log)
    if g_lo > 0.0 or g_hi < 0.0:
        edge = lo if g_lo > 0.0 else hi
        raise FitError(
            f"shape score has no root in {SHAPE_BRACKET}; data outside plausible "
            "prescribing regularity",
            last_shape=edge,
        )

    # moment-based start: sd of log(tau) ~ pi / (k * sqrt(6))
    sd_log = float(log_t.std())
    k = math.pi / (sd_log * math.sqrt(6.0)) if sd_log > 0 else 1.0
    k = min(max(k, lo * 1.01), hi * 0.99)

    converged = False
    for _ in range(max_iter):
        g, gprime = _shape_score(k, base, log_t, mean_log)
        if g > 0.0:
            hi = min(hi, k)
        else:
            lo = max(lo, k)
        k_new = k - g / gprime
        if not lo < k_new < hi:
            k_new = 0.5 * (lo + hi)
        if abs(k_new - k) < tol:
            k = k_new
            converged = True
            break
        k = k_new
    if not converged:
        raise FitError(f"shape iteration did not converge in {max_iter} steps", last_shape=k)

    scale = float(np.mean(arr**k) ** (1.0 / k))
    return WeibullParams(shape=float(k), scale=scale)


def mean_interval(params: WeibullParams) -> float:
    """Expected inter-arrival time scale * Gamma(1 + 1/shape)."""
    return params.mean_interval()
