"""Monte Carlo engine: scenario grid, replicate execution, summaries.

A scenario crosses a covariate view (true confounders vs. their
transformed versions) with a fitting mode (parametric models vs. the
stacked ensemble). Replicates stream to a results file as they finish;
summaries (bias, MSE, coverage, interval width) are recomputed from that
file, so interrupted runs resume and summaries can be regenerated.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from math import sqrt

import numpy as np

from . import dgp, glm
from .estimators import (NuisanceFit, aipw_estimate, gcomp_estimate,
                         ipw_estimate, tmle_estimate, truncate_propensity)
from .inference import bootstrap_se, if_se, ipw_robust_se, wald_ci
from .learners import default_library, fit_superlearner

__all__ = [
    "ScenarioConfig",
    "ReplicateRecord",
    "SummaryRow",
    "ESTIMATOR_NAMES",
    "run_replicate",
    "run_grid",
    "summarize",
    "read_results",
    "write_summary",
    "load_grid",
    "grid_to_json",
    "RESULTS_HEADER",
    "SUMMARY_HEADER",
]

log = logging.getLogger(__name__)

ESTIMATOR_NAMES = ("ipw", "gcomp", "aipw", "tmle")
COVARIATE_SETS = ("correct", "transformed")
FIT_MODES = ("parametric", "nonparametric")
CORRECT_DESIGNS = ("full-interaction", "main-effects")

RESULTS_HEADER = "scenario,covariates,fit_mode,n,rep,estimator,psi_hat,se,ci_lo,ci_hi,status"
SUMMARY_HEADER = "scenario,covariates,fit_mode,n,estimator,n_reps,bias,mse,rmse,coverage,median_ci_width"

# ensemble propensities can touch 0/1 exactly; pull them inside the open
# interval before they become denominators
PROPENSITY_FLOOR = 1e-12


@dataclass(frozen=True)
class ScenarioConfig:
    """One simulation cell: covariate view x fit mode x sample size."""

    covariate_set: str
    fit_mode: str
    n: int
    reps: int
    base_seed: int = 0
    estimators: tuple = ESTIMATOR_NAMES
    name: str = ""
    folds: int = 10
    correct_design: str = "full-interaction"
    truncate: tuple | None = None
    bootstrap_reps: int = 100
    fast_bootstrap: bool = False
    ci_level: float = 0.95

    def __post_init__(self):
        if self.covariate_set not in COVARIATE_SETS:
            raise ValueError(f"covariate_set must be one of {COVARIATE_SETS}")
        if self.fit_mode not in FIT_MODES:
            raise ValueError(f"fit_mode must be one of {FIT_MODES}")
        if self.correct_design not in CORRECT_DESIGNS:
            raise ValueError(f"correct_design must be one of {CORRECT_DESIGNS}")
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if self.folds < 2:
            raise ValueError("folds must be at least 2")
        if self.bootstrap_reps < 2:
            raise ValueError("bootstrap_reps must be at least 2")
        if not 0.0 < self.ci_level < 1.0:
            raise ValueError("ci_level must lie strictly inside (0, 1)")
        est = tuple(self.estimators)
        unknown = [e for e in est if e not in ESTIMATOR_NAMES]
        if not est or unknown:
            raise ValueError(f"estimators must be a nonempty subset of {ESTIMATOR_NAMES}")
        object.__setattr__(self, "estimators", est)
        if self.truncate is not None:
            lo, hi = self.truncate
            if not 0.0 <= lo < hi <= 1.0:
                raise ValueError("truncate bounds must satisfy 0 <= lo < hi <= 1")
            object.__setattr__(self, "truncate", (float(lo), float(hi)))
        if not self.name:
            object.__setattr__(self, "name", f"{self.covariate_set}-{self.fit_mode}")


@dataclass(frozen=True)
class ReplicateRecord:
    """One estimator's line in the results file."""

    scenario: str
    covariates: str
    fit_mode: str
    n: int
    rep: int
    estimator: str
    psi_hat: float
    se: float
    ci_lo: float
    ci_hi: float
    status: str


@dataclass(frozen=True)
class SummaryRow:
    scenario: str
    covariates: str
    fit_mode: str
    n: int
    estimator: str
    n_reps: int
    bias: float
    mse: float
    rmse: float
    coverage: float
    median_ci_width: float


# ---------------------------------------------------------------------------
# nuisance fitting


def _main_effects_design(covs: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones(covs.shape[0]), covs])


def _parametric_base(config: ScenarioConfig):
    """Design builder for the parametric nuisance models.

    The correct arm defaults to the full interaction design that actually
    generated the data; the transformed arm uses main effects only, which
    is the intended misspecification.
    """
    if config.covariate_set == "correct" and config.correct_design == "full-interaction":
        return dgp.design_matrix
    return _main_effects_design


def _fit_parametric(config: ScenarioConfig, covs, x, y):
    base = _parametric_base(config)(covs)
    pf = glm.fit_logistic(base, x.astype(float))
    fhat = glm.predict_logistic(pf, base)
    of = glm.fit_linear(np.column_stack([base, x.astype(float)]), y)
    ghat1 = glm.predict_linear(of, np.column_stack([base, np.ones(len(x))]))
    ghat0 = glm.predict_linear(of, np.column_stack([base, np.zeros(len(x))]))
    return fhat, ghat1, ghat0


def _fit_ensemble(config: ScenarioConfig, covs, x, y, rep_index: int):
    key_f = (config.base_seed, "sl_f", config.n, rep_index)
    key_g = (config.base_seed, "sl_g", config.n, rep_index)
    ens_f = fit_superlearner(default_library(key_f), covs, x.astype(float),
                             config.folds, "probability", key_f)
    fhat = ens_f.predict(covs)
    feats = np.column_stack([covs, x.astype(float)])
    ens_g = fit_superlearner(default_library(key_g), feats, y,
                             config.folds, "real", key_g)
    ghat1 = ens_g.predict(np.column_stack([covs, np.ones(len(x))]))
    ghat0 = ens_g.predict(np.column_stack([covs, np.zeros(len(x))]))
    return fhat, ghat1, ghat0


def _prepare_nuisance(config: ScenarioConfig, data: dgp.Dataset, rep_index: int):
    covs = data.c if config.covariate_set == "correct" else data.z
    if config.fit_mode == "parametric":
        fhat, ghat1, ghat0 = _fit_parametric(config, covs, data.x, data.y)
    else:
        fhat, ghat1, ghat0 = _fit_ensemble(config, covs, data.x, data.y, rep_index)
    fhat = np.clip(fhat, PROPENSITY_FLOOR, 1.0 - PROPENSITY_FLOOR)
    if config.truncate is not None:
        fhat = truncate_propensity(fhat, *config.truncate)
        fhat = np.clip(fhat, PROPENSITY_FLOOR, 1.0 - PROPENSITY_FLOOR)
    return covs, NuisanceFit.from_surfaces(data.x, fhat, ghat1, ghat0)


def _gcomp_pipeline(config: ScenarioConfig, rep_index: int):
    """Fit-and-estimate procedure the bootstrap reruns on each resample.

    Nonparametric mode refits the full ensemble unless fast_bootstrap is
    set, in which case resamples use the parametric outcome model as a
    desk-scale approximation.
    """
    def run(sample: dict) -> float:
        covs, x, y = sample["covs"], sample["x"], sample["y"]
        if config.fit_mode == "parametric" or config.fast_bootstrap:
            base = _parametric_base(config)(covs)
            of = glm.fit_linear(np.column_stack([base, x.astype(float)]), y)
            ghat1 = glm.predict_linear(of, np.column_stack([base, np.ones(len(x))]))
            ghat0 = glm.predict_linear(of, np.column_stack([base, np.zeros(len(x))]))
        else:
            key = (config.base_seed, "sl_boot", config.n, rep_index)
            feats = np.column_stack([covs, x.astype(float)])
            ens = fit_superlearner(default_library(key), feats, y,
                                   config.folds, "real", key)
            ghat1 = ens.predict(np.column_stack([covs, np.ones(len(x))]))
            ghat0 = ens.predict(np.column_stack([covs, np.zeros(len(x))]))
        return gcomp_estimate(ghat1, ghat0).psi_hat

    return run


def _clean_status(message: str) -> str:
    return message.replace(",", ";").replace("\n", " ")


def run_replicate(config: ScenarioConfig, rep_index: int) -> list[ReplicateRecord]:
    """One Monte Carlo replicate: simulate, fit nuisances, estimate.

    The dataset seed depends only on (base_seed, n, rep_index), so the
    covariate views and fit modes of a grid see identical cohorts. A
    nuisance failure yields failed records for every requested estimator
    rather than a silently missing replicate.
    """
    params = dgp.default_params()
    data = dgp.gen_trial(config.n, params, seed=(config.base_seed, config.n, rep_index))

    def record(estimator, psi=np.nan, se=np.nan, lo=np.nan, hi=np.nan, status="ok"):
        return ReplicateRecord(
            scenario=config.name, covariates=config.covariate_set,
            fit_mode=config.fit_mode, n=config.n, rep=rep_index,
            estimator=estimator, psi_hat=psi, se=se, ci_lo=lo, ci_hi=hi,
            status=status,
        )

    try:
        covs, nuisance = _prepare_nuisance(config, data, rep_index)
    except Exception as err:
        status = _clean_status(f"nuisance:{type(err).__name__}:{err}")
        return [record(e, status=status) for e in config.estimators]

    records = []
    for estimator in config.estimators:
        try:
            if estimator == "ipw":
                res = ipw_estimate(data.x, data.y, nuisance.fhat)
                se = ipw_robust_se(data.x, data.y, nuisance.fhat, res.psi_hat)
            elif estimator == "gcomp":
                res = gcomp_estimate(nuisance.ghat1, nuisance.ghat0)
                sample = {"covs": covs, "x": data.x, "y": data.y}
                se = bootstrap_se(
                    sample, _gcomp_pipeline(config, rep_index),
                    b=config.bootstrap_reps,
                    seed=(config.base_seed, "boot", config.n, rep_index),
                )
            elif estimator == "aipw":
                res = aipw_estimate(data.x, data.y, nuisance)
                se = if_se(res.influence)
            else:
                res = tmle_estimate(data.x, data.y, nuisance)
                if res.influence is None:
                    raise RuntimeError("degenerate outcome range")
                se = if_se(res.influence)
            ci = wald_ci(res.psi_hat, se, config.ci_level)
            records.append(record(estimator, res.psi_hat, se, ci.lo, ci.hi))
        except Exception as err:
            status = _clean_status(f"{type(err).__name__}:{err}")
            records.append(record(estimator, status=status))
    return records


# ---------------------------------------------------------------------------
# results file io


def _format_records(records) -> str:
    lines = []
    for r in records:
        lines.append(
            f"{r.scenario},{r.covariates},{r.fit_mode},{r.n},{r.rep},"
            f"{r.estimator},{r.psi_hat:.17g},{r.se:.17g},{r.ci_lo:.17g},"
            f"{r.ci_hi:.17g},{r.status}"
        )
    return "".join(line + "\n" for line in lines)


def read_results(path) -> list[ReplicateRecord]:
    records = []
    with open(path) as fh:
        header = fh.readline().rstrip("\n")
        if header != RESULTS_HEADER:
            raise ValueError(f"unexpected results header in {path}")
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 11:
                raise ValueError(f"malformed results row: {line!r}")
            records.append(ReplicateRecord(
                scenario=parts[0], covariates=parts[1], fit_mode=parts[2],
                n=int(parts[3]), rep=int(parts[4]), estimator=parts[5],
                psi_hat=float(parts[6]), se=float(parts[7]),
                ci_lo=float(parts[8]), ci_hi=float(parts[9]), status=parts[10],
            ))
    return records


# ---------------------------------------------------------------------------
# summaries


def _lower_median(values) -> float:
    ordered = sorted(values)
    return ordered[(len(ordered) - 1) // 2]


def summarize(records, psi_true: float) -> list[SummaryRow]:
    """Collapse per-replicate records into per-cell metric rows.

    Only records with status ok contribute; a cell with none is skipped
    with a warning.
    """
    cells: dict = {}
    order = []
    for r in records:
        key = (r.scenario, r.covariates, r.fit_mode, r.n, r.estimator)
        if key not in cells:
            cells[key] = []
            order.append(key)
        cells[key].append(r)
    rows = []
    for key in order:
        ok = [r for r in cells[key] if r.status == "ok"]
        if not ok:
            log.warning("cell %s has no completed replicates; omitted", key)
            continue
        psi = np.array([r.psi_hat for r in ok])
        widths = [r.ci_hi - r.ci_lo for r in ok]
        covered = [r.ci_lo <= psi_true <= r.ci_hi for r in ok]
        mse = float(np.mean((psi - psi_true) ** 2))
        rows.append(SummaryRow(
            scenario=key[0], covariates=key[1], fit_mode=key[2], n=key[3],
            estimator=key[4], n_reps=len(ok),
            bias=float(psi.mean() - psi_true),
            mse=mse, rmse=sqrt(mse),
            coverage=float(np.mean(covered)),
            median_ci_width=float(_lower_median(widths)),
        ))
    return rows


def write_summary(rows, path) -> None:
    with open(path, "w") as fh:
        fh.write(SUMMARY_HEADER + "\n")
        for r in rows:
            fh.write(
                f"{r.scenario},{r.covariates},{r.fit_mode},{r.n},{r.estimator},"
                f"{r.n_reps},{r.bias:.17g},{r.mse:.17g},{r.rmse:.17g},"
                f"{r.coverage:.17g},{r.median_ci_width:.17g}\n"
            )


def read_summary(path) -> list[SummaryRow]:
    rows = []
    with open(path) as fh:
        header = fh.readline().rstrip("\n")
        if header != SUMMARY_HEADER:
            raise ValueError(f"unexpected summary header in {path}")
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            p = line.split(",")
            if len(p) != 11:
                raise ValueError(f"malformed summary row: {line!r}")
            rows.append(SummaryRow(
                scenario=p[0], covariates=p[1], fit_mode=p[2], n=int(p[3]),
                estimator=p[4], n_reps=int(p[5]), bias=float(p[6]),
                mse=float(p[7]), rmse=float(p[8]), coverage=float(p[9]),
                median_ci_width=float(p[10]),
            ))
    return rows


# ---------------------------------------------------------------------------
# grid execution


def _replicate_lines(task) -> str:
    config, rep_index = task
    return _format_records(run_replicate(config, rep_index))


def _completed_reps(results_path) -> set:
    done = set()
    if not os.path.exists(results_path):
        return done
    for r in read_results(results_path):
        done.add((r.scenario, r.covariates, r.fit_mode, r.n, r.rep))
    return done


def run_grid(grid, out_dir, threads: int = 1, psi_true: float | None = None):
    """Run every (cell, replicate) of the grid, streaming results to disk.

    Replicates execute in parallel but rows are written in submission
    order, so the results file is byte-identical for any thread count.
    Completed (cell, rep) pairs found in an existing results file are
    skipped, which makes interrupted runs resumable. Returns the results
    path, summary path, summary rows, and the count of failed records.
    """
    grid = list(grid)
    if not grid:
        raise ValueError("grid is empty")
    if threads < 1:
        raise ValueError("threads must be >= 1")
    if psi_true is None:
        psi_true = dgp.default_params().psi_true
    os.makedirs(out_dir, exist_ok=True)
    results_path = os.path.join(out_dir, "results.csv")
    summary_path = os.path.join(out_dir, "summary.csv")

    done = _completed_reps(results_path)
    tasks = []
    for config in grid:
        for rep in range(config.reps):
            key = (config.name, config.covariate_set, config.fit_mode, config.n, rep)
            if key not in done:
                tasks.append((config, rep))

    fresh = not os.path.exists(results_path)
    with open(results_path, "a") as sink:
        if fresh:
            sink.write(RESULTS_HEADER + "\n")
            sink.flush()
        if tasks:
            if threads == 1:
                for task in tasks:
                    sink.write(_replicate_lines(task))
                    sink.flush()
            else:
                with ProcessPoolExecutor(max_workers=threads) as pool:
                    futures = [pool.submit(_replicate_lines, t) for t in tasks]
                    for fut in futures:
                        sink.write(fut.result())
                        sink.flush()

    records = read_results(results_path)
    rows = summarize(records, psi_true)
    write_summary(rows, summary_path)
    n_failed = sum(1 for r in records if r.status != "ok")
    if n_failed:
        log.warning("%d of %d records failed", n_failed, len(records))
    return results_path, summary_path, rows, n_failed


# ---------------------------------------------------------------------------
# config files


def _config_to_dict(config: ScenarioConfig) -> dict:
    out = {}
    for f in fields(config):
        v = getattr(config, f.name)
        out[f.name] = list(v) if isinstance(v, tuple) else v
    return out


def grid_to_json(grid, path) -> None:
    with open(path, "w") as fh:
        json.dump({"grid": [_config_to_dict(c) for c in grid]}, fh, indent=2)
        fh.write("\n")


def _config_from_dict(raw: dict) -> ScenarioConfig:
    known = {f.name for f in fields(ScenarioConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    kwargs = dict(raw)
    for key in ("estimators", "truncate"):
        if key in kwargs and isinstance(kwargs[key], list):
            kwargs[key] = tuple(kwargs[key])
    return ScenarioConfig(**kwargs)


def load_grid(path) -> list[ScenarioConfig]:
    """Read a grid config: a JSON object with a "grid" list, a bare list,
    or a single config object."""
    with open(path) as fh:
        raw = json.load(fh)
    if isinstance(raw, dict) and "grid" in raw:
        raw = raw["grid"]
    if isinstance(raw, dict):
        raw = [raw]
    if not isinstance(raw, list) or not raw:
        raise ValueError(f"no scenario configs found in {path}")
    return [_config_from_dict(item) for item in raw]
