"""Least squares and logistic regression, written against the exact
numerical contracts the estimators need.

Linear fits use a rank-revealing SVD solve (minimum-norm on deficient
designs). Logistic fits run iteratively reweighted least squares with
optional prior weights and offsets. The one-parameter no-intercept update
used to retarget an outcome model is a safeguarded Newton solve of its
quasi-logistic score.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit

__all__ = [
    "LinearFit",
    "LogisticFit",
    "FluctuationError",
    "fit_linear",
    "predict_linear",
    "fit_logistic",
    "predict_logistic",
    "fit_fluctuation",
]

SCORE_TOL = 1e-8
DEVIANCE_RTOL = 1e-10
MAX_IRLS_ITER = 50
PROB_CLAMP = 1e-12          # prediction clamp; keeps downstream weights finite
SEPARATION_PIN = 1e-10      # fitted probs at this bound signal separation
FLUCT_SCORE_TOL = 1e-10
FLUCT_MAX_ITER = 100
FLUCT_BRACKET = 20.0


class FluctuationError(RuntimeError):
    """The one-parameter update score had no root in the search bracket."""


@dataclass(frozen=True)
class LinearFit:
    """Least-squares coefficients plus the residual variance of the fit."""

    coef: np.ndarray
    residual_variance: float
    rank_deficient: bool = False


@dataclass(frozen=True)
class LogisticFit:
    """IRLS logistic coefficients; ``converged`` guarantees the score is
    below tolerance."""

    coef: np.ndarray
    converged: bool
    iterations: int


def _check_design(design: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    design = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    if design.ndim != 2:
        raise ValueError("design must be a 2-d matrix")
    if y.shape != (design.shape[0],):
        raise ValueError(f"y length {y.shape} does not match design rows {design.shape[0]}")
    if not np.isfinite(design).all():
        raise ValueError("design must be finite")
    return design, y


def _check_weights(weights, n: int) -> np.ndarray | None:
    if weights is None:
        return None
    w = np.asarray(weights, dtype=float)
    if w.shape != (n,):
        raise ValueError("weights must match the number of rows")
    if (w < 0).any():
        raise ValueError("weights must be nonnegative")
    if not (w > 0).any():
        raise ValueError("weights must not all be zero")
    return w


def fit_linear(design, y, weights=None) -> LinearFit:
    """Weighted least squares via SVD.

    Minimizes the (weighted) residual sum of squares; a rank-deficient
    design yields the minimum-norm solution with ``rank_deficient`` set.
    """
    design, y = _check_design(design, y)
    n, p = design.shape
    if n < p:
        raise ValueError(f"need at least as many rows ({n}) as columns ({p})")
    w = _check_weights(weights, n)
    if w is None:
        a, b = design, y
    else:
        sw = np.sqrt(w)
        a, b = design * sw[:, None], y * sw
    coef, _, rank, _ = np.linalg.lstsq(a, b, rcond=None)
    resid = b - a @ coef
    dof = n - rank
    residual_variance = float(resid @ resid / dof) if dof > 0 else 0.0
    return LinearFit(coef=coef, residual_variance=residual_variance, rank_deficient=rank < p)


def predict_linear(fit: LinearFit, design) -> np.ndarray:
    design = np.asarray(design, dtype=float)
    if design.ndim != 2 or design.shape[1] != fit.coef.shape[0]:
        raise ValueError(f"design width {design.shape} does not match coefficient length {fit.coef.shape[0]}")
    return design @ fit.coef


def _bernoulli_deviance(y, mu, w):
    mu = np.clip(mu, PROB_CLAMP, 1.0 - PROB_CLAMP)
    ll = y * np.log(mu) + (1.0 - y) * np.log1p(-mu)
    return -2.0 * float(w @ ll)


def fit_logistic(design, y, weights=None, offset=None) -> LogisticFit:
    """Maximize the (weighted) Bernoulli log-likelihood with linear
    predictor ``design @ coef + offset`` by IRLS.

    Stops when the largest score component falls below 1e-8 or the relative
    deviance change below 1e-10, capped at 50 iterations. Fitted
    probabilities pinned to the clamp bounds signal complete separation and
    the fit comes back with ``converged=False``.
    """
    design, y = _check_design(design, y)
    n, p = design.shape
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("logistic targets must be 0 or 1")
    w = _check_weights(weights, n)
    if w is None:
        w = np.ones(n)
    if offset is None:
        offset = np.zeros(n)
    else:
        offset = np.asarray(offset, dtype=float)
        if offset.shape != (n,):
            raise ValueError("offset must match the number of rows")

    coef = np.zeros(p)
    eta = design @ coef + offset
    mu = expit(eta)
    deviance = _bernoulli_deviance(y, mu, w)
    converged = False
    iterations = 0
    while True:
        score = design.T @ (w * (y - mu))
        if np.abs(score).max() < SCORE_TOL:
            converged = True
            break
        if iterations >= MAX_IRLS_ITER:
            break
        iterations += 1

        irls_w = np.maximum(w * mu * (1.0 - mu), 1e-300)
        working = (eta - offset) + (y - mu) / np.maximum(mu * (1.0 - mu), 1e-300)
        sw = np.sqrt(irls_w)
        new_coef = np.linalg.lstsq(design * sw[:, None], working * sw, rcond=None)[0]

        # step-halve if the full IRLS step worsens the deviance
        step = new_coef - coef
        scale = 1.0
        for _ in range(20):
            dev_c = _bernoulli_deviance(y, expit(design @ (coef + scale * step) + offset), w)
            if dev_c <= deviance + 1e-12:
                break
            scale /= 2.0
        coef = coef + scale * step
        eta = design @ coef + offset
        mu = expit(eta)
        new_deviance = _bernoulli_deviance(y, mu, w)
        small_change = abs(new_deviance - deviance) < DEVIANCE_RTOL * (abs(deviance) + 1e-12)
        deviance = new_deviance
        if small_change:
            score = design.T @ (w * (y - mu))
            converged = bool(np.abs(score).max() < SCORE_TOL)
            break

    if ((mu <= SEPARATION_PIN) | (mu >= 1.0 - SEPARATION_PIN)).any():
        converged = False
    return LogisticFit(coef=coef, converged=converged, iterations=iterations)


def predict_logistic(fit: LogisticFit, design, offset=None) -> np.ndarray:
    """Fitted probabilities, clamped away from 0 and 1."""
    design = np.asarray(design, dtype=float)
    if design.ndim != 2 or design.shape[1] != fit.coef.shape[0]:
        raise ValueError(f"design width {design.shape} does not match coefficient length {fit.coef.shape[0]}")
    eta = design @ fit.coef
    if offset is not None:
        offset = np.asarray(offset, dtype=float)
        if offset.shape != (design.shape[0],):
            raise ValueError("offset must match the number of rows")
        eta = eta + offset
    return np.clip(expit(eta), PROB_CLAMP, 1.0 - PROB_CLAMP)


def fit_fluctuation(y_scaled, offset_logits, h) -> float:
    """Solve the single-parameter quasi-logistic score
    ``sum h_i * (y_i - expit(offset_i + eps * h_i)) = 0`` for eps.

    Safeguarded Newton: steps that leave the current sign-change bracket
    fall back to bisection. Targets may be fractional in [0, 1].
    """
    y = np.asarray(y_scaled, dtype=float)
    offset = np.asarray(offset_logits, dtype=float)
    h = np.asarray(h, dtype=float)
    if y.shape != offset.shape or y.shape != h.shape:
        raise ValueError("y_scaled, offset_logits, h must have equal length")
    if ((y < 0) | (y > 1)).any():
        raise ValueError("y_scaled must lie in [0, 1]")
    if not (np.isfinite(h).all() and np.isfinite(offset).all()):
        raise ValueError("offset_logits and h must be finite")

    def score(eps):
        return float(h @ (y - expit(offset + eps * h)))

    s0 = score(0.0)
    if abs(s0) < FLUCT_SCORE_TOL:
        return 0.0

    # the score is nonincreasing in eps, so a root needs a sign change
    lo, hi = -FLUCT_BRACKET, FLUCT_BRACKET
    s_lo, s_hi = score(lo), score(hi)
    if not (s_lo >= 0.0 >= s_hi):
        raise FluctuationError(
            "no sign change for the update score on "
            f"[-{FLUCT_BRACKET}, {FLUCT_BRACKET}]: score({lo})={s_lo:.6g}, "
            f"score({hi})={s_hi:.6g}, h range [{h.min():.6g}, {h.max():.6g}]"
        )

    eps = 0.0
    s = s0
    for _ in range(FLUCT_MAX_ITER):
        if abs(s) < FLUCT_SCORE_TOL:
            return eps
        if s > 0:
            lo = eps
        else:
            hi = eps
        mu = expit(offset + eps * h)
        slope = float(h @ (h * mu * (1.0 - mu)))
        if slope > 0:
            cand = eps + s / slope
        else:
            cand = (lo + hi) / 2.0
        if not (lo < cand < hi):
            cand = (lo + hi) / 2.0
        eps = cand
        s = score(eps)
    return eps
