"""Average-effect estimators over supplied nuisance predictions.

Four ways from (exposure, outcome, nuisance fits) to a point estimate of
the average causal effect: inverse probability weighting, g-computation,
augmented IPW, and a targeted (fluctuation-updated) plug-in. Estimators
with an influence-function representation return per-unit influence
values for variance estimation downstream.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit

from .glm import FluctuationError, fit_fluctuation

__all__ = [
    "NuisanceFit",
    "EstimateResult",
    "ipw_estimate",
    "gcomp_estimate",
    "aipw_estimate",
    "tmle_estimate",
    "truncate_propensity",
    "TMLE_SCALE_CLAMP",
]

# keeps logit(ghat) finite after scaling onto [0, 1]
TMLE_SCALE_CLAMP = 0.005


@dataclass(frozen=True)
class NuisanceFit:
    """Per-row nuisance predictions: propensity and outcome surfaces."""

    fhat: np.ndarray
    ghat_obs: np.ndarray
    ghat1: np.ndarray
    ghat0: np.ndarray

    def __post_init__(self):
        fhat = np.asarray(self.fhat, dtype=float)
        ghat_obs = np.asarray(self.ghat_obs, dtype=float)
        ghat1 = np.asarray(self.ghat1, dtype=float)
        ghat0 = np.asarray(self.ghat0, dtype=float)
        n = fhat.shape[0] if fhat.ndim == 1 else -1
        for name, v in (("fhat", fhat), ("ghat_obs", ghat_obs),
                        ("ghat1", ghat1), ("ghat0", ghat0)):
            if v.ndim != 1 or v.shape[0] != n:
                raise ValueError(f"{name} must be a 1-d vector of common length")
            if not np.isfinite(v).all():
                raise ValueError(f"{name} contains non-finite values")
        if ((fhat <= 0.0) | (fhat >= 1.0)).any():
            raise ValueError("fhat must lie strictly inside (0, 1)")
        object.__setattr__(self, "fhat", fhat)
        object.__setattr__(self, "ghat_obs", ghat_obs)
        object.__setattr__(self, "ghat1", ghat1)
        object.__setattr__(self, "ghat0", ghat0)

    @classmethod
    def from_surfaces(cls, x, fhat, ghat1, ghat0) -> "NuisanceFit":
        """Build a fit whose observed-arm predictions follow the surfaces."""
        x = _check_exposure(x)
        ghat1 = np.asarray(ghat1, dtype=float)
        ghat0 = np.asarray(ghat0, dtype=float)
        return cls(fhat=fhat, ghat_obs=np.where(x == 1, ghat1, ghat0),
                   ghat1=ghat1, ghat0=ghat0)


@dataclass(frozen=True)
class EstimateResult:
    """One estimator's output on one dataset."""

    estimator: str
    psi_hat: float
    influence: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)


def _check_exposure(x) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("exposure must be a nonempty 1-d vector")
    if not np.isin(x, (0, 1)).all():
        raise ValueError("exposure must be binary 0/1")
    return x.astype(np.int64)


def _check_outcome(y, n: int) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.shape != (n,):
        raise ValueError("outcome length must match exposure length")
    if not np.isfinite(y).all():
        raise ValueError("outcome contains non-finite values")
    return y


def _check_ipw_propensity(x: np.ndarray, fhat) -> np.ndarray:
    """Armwise positivity: weights must be finite on the arms actually used.

    f̂=1 on an exposed row (or 0 on an unexposed row) is harmless; the
    opposite boundary would put infinite mass on an observed term.
    """
    fhat = np.asarray(fhat, dtype=float)
    if fhat.shape != x.shape:
        raise ValueError("fhat length must match exposure length")
    if not np.isfinite(fhat).all() or ((fhat < 0.0) | (fhat > 1.0)).any():
        raise ValueError("fhat must lie in [0, 1]")
    if (fhat[x == 1] == 0.0).any() or (fhat[x == 0] == 1.0).any():
        raise ValueError("fhat assigns probability 0 to an observed arm")
    return fhat


def _ipw_summands(x: np.ndarray, y: np.ndarray, fhat: np.ndarray) -> np.ndarray:
    treated = x == 1
    out = np.empty_like(y)
    out[treated] = y[treated] / fhat[treated]
    out[~treated] = -y[~treated] / (1.0 - fhat[~treated])
    return out


def _inverse_weights(x: np.ndarray, fhat: np.ndarray) -> np.ndarray:
    treated = x == 1
    w = np.empty(x.shape[0])
    w[treated] = 1.0 / fhat[treated]
    w[~treated] = 1.0 / (1.0 - fhat[~treated])
    return w


def ipw_estimate(x, y, fhat) -> EstimateResult:
    """Inverse-probability-weighted contrast of observed outcomes.

    psi_hat = mean(x*y/fhat - (1-x)*y/(1-fhat)). The influence values
    treat the propensity as known, so the implied variance is the
    conservative (robust) one.
    """
    x = _check_exposure(x)
    y = _check_outcome(y, x.shape[0])
    fhat = _check_ipw_propensity(x, fhat)
    summands = _ipw_summands(x, y, fhat)
    psi_hat = float(summands.mean())
    w = _inverse_weights(x, fhat)
    return EstimateResult(
        estimator="ipw",
        psi_hat=psi_hat,
        influence=summands - psi_hat,
        diagnostics={"weight_range": (float(w.min()), float(w.max()))},
    )


def gcomp_estimate(ghat1, ghat0) -> EstimateResult:
    """Plug-in contrast of the fitted outcome surfaces.

    No influence vector: inference for this estimator goes through the
    bootstrap.
    """
    ghat1 = np.asarray(ghat1, dtype=float)
    ghat0 = np.asarray(ghat0, dtype=float)
    if ghat1.ndim != 1 or ghat1.shape != ghat0.shape or ghat1.size == 0:
        raise ValueError("ghat1 and ghat0 must be nonempty vectors of equal length")
    return EstimateResult(
        estimator="gcomp",
        psi_hat=float(np.mean(ghat1 - ghat0)),
    )


def _check_nuisance(x: np.ndarray, nuisance: NuisanceFit) -> NuisanceFit:
    if nuisance.fhat.shape != x.shape:
        raise ValueError("nuisance vectors must match exposure length")
    mismatch = np.where(x == 1, nuisance.ghat1, nuisance.ghat0) != nuisance.ghat_obs
    if mismatch.any():
        raise ValueError("ghat_obs disagrees with the arm surfaces")
    return nuisance


def aipw_estimate(x, y, nuisance: NuisanceFit) -> EstimateResult:
    """Augmented IPW: g-computation plus a weighted residual correction."""
    x = _check_exposure(x)
    y = _check_outcome(y, x.shape[0])
    nuisance = _check_nuisance(x, nuisance)
    sign = 2.0 * x - 1.0
    denom = sign * nuisance.fhat + (1.0 - x)
    summands = (sign * (y - nuisance.ghat_obs) / denom
                + nuisance.ghat1 - nuisance.ghat0)
    psi_hat = float(summands.mean())
    w = _inverse_weights(x, nuisance.fhat)
    return EstimateResult(
        estimator="aipw",
        psi_hat=psi_hat,
        influence=summands - psi_hat,
        diagnostics={"weight_range": (float(w.min()), float(w.max()))},
    )


def tmle_estimate(x, y, nuisance: NuisanceFit,
                  scale_clamp: float = TMLE_SCALE_CLAMP) -> EstimateResult:
    """Targeted update of the outcome surfaces before plugging in.

    Outcomes and fitted surfaces are mapped onto [0, 1] by the empirical
    outcome range, the surfaces are fluctuated along the inverse-weight
    covariate H (1/fhat on the exposed arm, -1/(1-fhat) on the unexposed)
    by a one-parameter quasi-logistic fit, and the updated surfaces are
    mapped back. Constant outcomes make the scaling degenerate; the
    initial plug-in is returned with a flag in that case.
    """
    x = _check_exposure(x)
    n = x.shape[0]
    if n < 2:
        raise ValueError("tmle needs at least 2 rows")
    y = _check_outcome(y, n)
    nuisance = _check_nuisance(x, nuisance)
    if not 0.0 < scale_clamp < 0.5:
        raise ValueError("scale_clamp must lie in (0, 0.5)")

    lo, hi = float(y.min()), float(y.max())
    if hi == lo:
        psi_hat = float(np.mean(nuisance.ghat1 - nuisance.ghat0))
        return EstimateResult(
            estimator="tmle",
            psi_hat=psi_hat,
            diagnostics={"degenerate_bounds": True, "y_bounds": (lo, hi)},
        )

    span = hi - lo
    y_s = (y - lo) / span
    g1_s = np.clip((nuisance.ghat1 - lo) / span, scale_clamp, 1.0 - scale_clamp)
    g0_s = np.clip((nuisance.ghat0 - lo) / span, scale_clamp, 1.0 - scale_clamp)
    gobs_s = np.where(x == 1, g1_s, g0_s)

    h1 = 1.0 / nuisance.fhat
    h0 = -1.0 / (1.0 - nuisance.fhat)
    h_obs = np.where(x == 1, h1, h0)

    try:
        eps = fit_fluctuation(y_s, logit(gobs_s), h_obs)
    except FluctuationError as err:
        raise FluctuationError(
            f"{err}; fhat range [{nuisance.fhat.min():.6g}, "
            f"{nuisance.fhat.max():.6g}]"
        ) from err

    g1_u = lo + span * expit(logit(g1_s) + eps * h1)
    g0_u = lo + span * expit(logit(g0_s) + eps * h0)
    gobs_u = np.where(x == 1, g1_u, g0_u)
    psi_hat = float(np.mean(g1_u - g0_u))
    influence = h_obs * (y - gobs_u) + g1_u - g0_u - psi_hat
    clamped = int(np.sum(((nuisance.ghat1 - lo) / span != g1_s)
                         | ((nuisance.ghat0 - lo) / span != g0_s)))
    return EstimateResult(
        estimator="tmle",
        psi_hat=psi_hat,
        influence=influence,
        diagnostics={
            "epsilon": float(eps),
            "weight_range": (float(np.abs(h_obs).min()), float(np.abs(h_obs).max())),
            "y_bounds": (lo, hi),
            "n_clamped": clamped,
        },
    )


def truncate_propensity(fhat, lo: float, hi: float) -> np.ndarray:
    """Entrywise clamp of propensity predictions to [lo, hi]."""
    if not 0.0 <= lo < hi <= 1.0:
        raise ValueError(f"need 0 <= lo < hi <= 1, got [{lo}, {hi}]")
    return np.clip(np.asarray(fhat, dtype=float), lo, hi)
