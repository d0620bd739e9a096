"""Standard errors and Wald intervals for the effect estimators.

Three variance routes: influence-function standard errors for the
estimators that emit influence values, a robust (propensity-as-known)
variant for inverse weighting, and a full-pipeline nonparametric
bootstrap for the plug-in estimator.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import dgp
from .estimators import ipw_estimate
from .rng import substream

__all__ = [
    "ConfidenceInterval",
    "InferenceError",
    "if_se",
    "ipw_robust_se",
    "bootstrap_se",
    "wald_ci",
    "normal_quantile",
    "DEFAULT_BOOTSTRAP_REPS",
]

log = logging.getLogger(__name__)

DEFAULT_BOOTSTRAP_REPS = 100
MAX_RESAMPLE_ATTEMPTS = 5
MAX_FAILURE_FRACTION = 0.2


class InferenceError(RuntimeError):
    """Variance estimation could not be completed."""


@dataclass(frozen=True)
class ConfidenceInterval:
    level: float
    lo: float
    hi: float

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValueError("interval endpoints out of order")

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def covers(self, value: float) -> bool:
        return self.lo <= value <= self.hi


def if_se(influence) -> float:
    """Standard error from per-unit influence values: sd(n-1 divisor)/sqrt(n)."""
    v = np.asarray(influence, dtype=float)
    if v.ndim != 1 or v.size < 2:
        raise ValueError("need at least 2 influence values")
    return float(v.std(ddof=1) / math.sqrt(v.size))


def ipw_robust_se(x, y, fhat, psi_hat: float) -> float:
    """Robust standard error for the weighting estimator.

    The influence values treat fhat as fixed, which is conservative when
    the propensity was itself estimated.
    """
    result = ipw_estimate(x, y, fhat)
    return if_se(result.influence + result.psi_hat - psi_hat)


def _resample(dataset, rows: np.ndarray):
    if isinstance(dataset, dgp.Dataset):
        return dgp.take_rows(dataset, rows)
    if isinstance(dataset, dict):
        return {k: np.asarray(v)[rows] for k, v in dataset.items()}
    if isinstance(dataset, (tuple, list)):
        return type(dataset)(np.asarray(v)[rows] for v in dataset)
    return dataset[rows]


def _n_rows(dataset) -> int:
    if isinstance(dataset, dgp.Dataset):
        return dataset.x.shape[0]
    if isinstance(dataset, dict):
        return len(next(iter(dataset.values())))
    if isinstance(dataset, (tuple, list)):
        return len(dataset[0])
    return len(dataset)


def bootstrap_se(dataset, pipeline, b: int = DEFAULT_BOOTSTRAP_REPS, seed=0) -> float:
    """Standard deviation of the pipeline estimate over b row resamples.

    Each resample draws n rows with replacement from its own RNG
    substream, so results do not depend on execution order. A resample
    whose pipeline raises is redrawn up to 5 times before being dropped;
    more than 20% dropped is an error.
    """
    if b < 2:
        raise ValueError("need at least 2 bootstrap resamples")
    n = _n_rows(dataset)
    if n < 1:
        raise ValueError("dataset is empty")
    key = seed if isinstance(seed, tuple) else (seed,)
    estimates = []
    failed = 0
    for r in range(b):
        value = None
        for attempt in range(MAX_RESAMPLE_ATTEMPTS):
            rows = substream("bootstrap", *key, r, attempt).integers(0, n, size=n)
            try:
                value = float(pipeline(_resample(dataset, rows)))
                break
            except Exception as err:
                last_err = err
        if value is None:
            failed += 1
            log.warning("bootstrap resample %d failed %d times: %s",
                        r, MAX_RESAMPLE_ATTEMPTS, last_err)
        else:
            estimates.append(value)
    if failed > MAX_FAILURE_FRACTION * b:
        raise InferenceError(
            f"{failed} of {b} bootstrap resamples failed "
            f"(last error: {last_err})"
        )
    if failed:
        log.warning("bootstrap se based on %d of %d resamples", b - failed, b)
    return float(np.std(estimates, ddof=1))


# Acklam's rational approximation to the standard normal quantile,
# then one Halley polish against the erfc-based CDF.
_ACKLAM_A = (-3.969683028665376e+01, 2.209460984245205e+02,
             -2.759285104469687e+02, 1.383577518672690e+02,
             -3.066479806614716e+01, 2.506628277459239e+00)
_ACKLAM_B = (-5.447609879822406e+01, 1.615858368580409e+02,
             -1.556989798598866e+02, 6.680131188771972e+01,
             -1.328068155288572e+01)
_ACKLAM_C = (-7.784894002430293e-03, -3.223964580411365e-01,
             -2.400758277161838e+00, -2.549732539343734e+00,
             4.374664141464968e+00, 2.938163982698783e+00)
_ACKLAM_D = (7.784695709041462e-03, 3.224671290700398e-01,
             2.445134137142996e+00, 3.754408661907416e+00)
_ACKLAM_SPLIT = 0.02425


def _poly(coefs, t: float) -> float:
    acc = coefs[0]
    for c in coefs[1:]:
        acc = acc * t + c
    return acc


def normal_quantile(p: float) -> float:
    """Inverse standard normal CDF, accurate to well under 1e-9."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie strictly inside (0, 1)")
    if p < _ACKLAM_SPLIT:
        q = math.sqrt(-2.0 * math.log(p))
        z = _poly(_ACKLAM_C, q) / (_poly(_ACKLAM_D, q) * q + 1.0)
    elif p <= 1.0 - _ACKLAM_SPLIT:
        q = p - 0.5
        r = q * q
        z = _poly(_ACKLAM_A, r) * q / (_poly(_ACKLAM_B, r) * r + 1.0)
    else:
        q = math.sqrt(-2.0 * math.log1p(-p))
        z = -_poly(_ACKLAM_C, q) / (_poly(_ACKLAM_D, q) * q + 1.0)
    err = 0.5 * math.erfc(-z / math.sqrt(2.0)) - p
    u = err * math.sqrt(2.0 * math.pi) * math.exp(z * z / 2.0)
    return z - u / (1.0 + z * u / 2.0)


def wald_ci(psi_hat: float, se: float, level: float = 0.95) -> ConfidenceInterval:
    """Normal-theory interval psi_hat +/- z * se."""
    if se < 0.0:
        raise ValueError("se must be nonnegative")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie strictly inside (0, 1)")
    z = normal_quantile((1.0 + level) / 2.0)
    return ConfidenceInterval(level=level, lo=psi_hat - z * se, hi=psi_hat + z * se)
