"""Command-line surface: simulate, estimate, plot.

Exit codes follow sysexits conventions: 0 success, 2 partial simulation
completion, 64 usage error, 65 data error, 70 internal error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys

import numpy as np

from . import glm, harness
from .charts import METRICS, plot_summary
from .estimators import (NuisanceFit, aipw_estimate, gcomp_estimate,
                         ipw_estimate, tmle_estimate, truncate_propensity)
from .inference import bootstrap_se, if_se, ipw_robust_se, wald_ci
from .learners import default_library, fit_superlearner

__all__ = ["main"]

EXIT_OK = 0
EXIT_PARTIAL = 2
EXIT_USAGE = 64
EXIT_DATA = 65
EXIT_INTERNAL = 70

PROPENSITY_FLOOR = 1e-12


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so main controls codes."""

    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="drbench", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="command")

    sim = sub.add_parser("simulate", help="run a Monte Carlo scenario grid")
    sim.add_argument("--config", help="JSON grid config; overrides inline flags")
    sim.add_argument("--covariates", choices=harness.COVARIATE_SETS)
    sim.add_argument("--fit", choices=harness.FIT_MODES)
    sim.add_argument("--n", help="comma-separated sample sizes, e.g. 50,200,1200")
    sim.add_argument("--reps", type=int,
                     help="replicates per cell (default 1000 parametric, 200 nonparametric)")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--threads", type=int, default=None)
    sim.add_argument("--out", required=True, help="output directory")
    sim.add_argument("--estimators", default=",".join(harness.ESTIMATOR_NAMES))
    sim.add_argument("--folds", type=int, default=10)
    sim.add_argument("--bootstrap-reps", type=int, default=100)
    sim.add_argument("--truncate", help="propensity clamp bounds lo,hi")
    sim.add_argument("--fast-bootstrap", action="store_true",
                     help="bootstrap refits parametric outcome models only")
    sim.add_argument("--correct-design", choices=harness.CORRECT_DESIGNS,
                     default="full-interaction")

    est = sub.add_parser("estimate",
                         help="estimate the average effect on a CSV dataset")
    est.add_argument("--data", required=True, help="CSV with named columns")
    est.add_argument("--outcome", required=True, help="outcome column name")
    est.add_argument("--exposure", required=True, help="binary exposure column name")
    est.add_argument("--covariates",
                     help="comma-separated covariate columns (default: all others)")
    est.add_argument("--estimator", default=",".join(harness.ESTIMATOR_NAMES))
    est.add_argument("--fit", choices=harness.FIT_MODES, default="parametric")
    est.add_argument("--level", type=float, default=0.95)
    est.add_argument("--folds", type=int, default=10)
    est.add_argument("--bootstrap-reps", type=int, default=100)
    est.add_argument("--truncate", help="propensity clamp bounds lo,hi")
    est.add_argument("--fast-bootstrap", action="store_true")
    est.add_argument("--seed", type=int, default=0)

    plot = sub.add_parser("plot", help="emit SVG line charts from a summary file")
    plot.add_argument("--summary", required=True, help="summary CSV path")
    plot.add_argument("--metric", required=True, choices=METRICS)
    plot.add_argument("--out", required=True, help="output directory")

    return parser


def _parse_truncate(raw):
    if raw is None:
        return None
    parts = raw.split(",")
    if len(parts) != 2:
        raise UsageError(f"--truncate expects lo,hi, got {raw!r}")
    try:
        lo, hi = float(parts[0]), float(parts[1])
    except ValueError:
        raise UsageError(f"--truncate expects numbers, got {raw!r}")
    if not 0.0 <= lo < hi <= 1.0:
        raise UsageError("--truncate bounds must satisfy 0 <= lo < hi <= 1")
    return lo, hi


def _parse_estimators(raw):
    names = tuple(s.strip() for s in raw.split(",") if s.strip())
    unknown = [s for s in names if s not in harness.ESTIMATOR_NAMES]
    if not names or unknown:
        raise UsageError(
            f"estimators must be drawn from {','.join(harness.ESTIMATOR_NAMES)}")
    return names


def _threads(args) -> int:
    if args.threads is not None:
        value = args.threads
    else:
        raw = os.environ.get("DRBENCH_THREADS", "1")
        try:
            value = int(raw)
        except ValueError:
            raise UsageError(f"DRBENCH_THREADS must be an integer, got {raw!r}")
    if value < 1:
        raise UsageError("thread count must be >= 1")
    return value


# ---------------------------------------------------------------------------
# simulate


def _inline_grid(args) -> list:
    missing = [flag for flag, v in (("--covariates", args.covariates),
                                    ("--fit", args.fit), ("--n", args.n)) if not v]
    if missing:
        raise UsageError(f"simulate needs {' '.join(missing)} (or --config)")
    try:
        sizes = [int(s) for s in args.n.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--n expects comma-separated integers, got {args.n!r}")
    if not sizes:
        raise UsageError("--n lists no sample sizes")
    reps = args.reps
    if reps is None:
        reps = 1000 if args.fit == "parametric" else 200
    grid = []
    for n in sizes:
        try:
            grid.append(harness.ScenarioConfig(
                covariate_set=args.covariates, fit_mode=args.fit, n=n,
                reps=reps, base_seed=args.seed,
                estimators=_parse_estimators(args.estimators),
                folds=args.folds, correct_design=args.correct_design,
                truncate=_parse_truncate(args.truncate),
                bootstrap_reps=args.bootstrap_reps,
                fast_bootstrap=args.fast_bootstrap,
            ))
        except ValueError as err:
            raise UsageError(str(err))
    return grid


def _cmd_simulate(args) -> int:
    if args.config:
        try:
            grid = harness.load_grid(args.config)
        except FileNotFoundError:
            raise DataError(f"config file not found: {args.config}")
        except (ValueError, TypeError) as err:
            raise DataError(f"bad config file: {err}")
    else:
        grid = _inline_grid(args)
    threads = _threads(args)
    try:
        results_path, summary_path, _, n_failed = harness.run_grid(
            grid, args.out, threads=threads)
    except OSError as err:
        raise DataError(f"cannot write outputs under {args.out}: {err}")
    print(f"results: {results_path}")
    print(f"summary: {summary_path}")
    if n_failed:
        print(f"failed records: {n_failed}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


# ---------------------------------------------------------------------------
# estimate


def _read_columns(path):
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                raise DataError(f"{path} is empty")
            header = [h.strip() for h in header]
            rows = [row for row in reader if row]
    except OSError as err:
        raise DataError(f"cannot read {path}: {err}")
    columns = {}
    for j, name in enumerate(header):
        vals = []
        for i, row in enumerate(rows):
            if len(row) != len(header):
                raise DataError(f"{path} row {i + 2} has {len(row)} fields, "
                                f"expected {len(header)}")
            try:
                vals.append(float(row[j]))
            except ValueError:
                raise DataError(f"{path} column {name!r} row {i + 2} is not numeric")
        columns[name] = np.asarray(vals)
    if not rows:
        raise DataError(f"{path} has no data rows")
    return columns


def _user_nuisance(w, x, y, fit_mode, folds, seed, truncate):
    if fit_mode == "parametric":
        base = np.column_stack([np.ones(len(x)), w])
        pf = glm.fit_logistic(base, x.astype(float))
        fhat = glm.predict_logistic(pf, base)
        of = glm.fit_linear(np.column_stack([base, x.astype(float)]), y)
        ghat1 = glm.predict_linear(of, np.column_stack([base, np.ones(len(x))]))
        ghat0 = glm.predict_linear(of, np.column_stack([base, np.zeros(len(x))]))
    else:
        key_f = (seed, "user_f")
        key_g = (seed, "user_g")
        ens_f = fit_superlearner(default_library(key_f), w, x.astype(float),
                                 folds, "probability", key_f)
        fhat = ens_f.predict(w)
        feats = np.column_stack([w, x.astype(float)])
        ens_g = fit_superlearner(default_library(key_g), feats, y, folds,
                                 "real", key_g)
        ghat1 = ens_g.predict(np.column_stack([w, np.ones(len(x))]))
        ghat0 = ens_g.predict(np.column_stack([w, np.zeros(len(x))]))
    fhat = np.clip(fhat, PROPENSITY_FLOOR, 1.0 - PROPENSITY_FLOOR)
    if truncate is not None:
        fhat = truncate_propensity(fhat, *truncate)
        fhat = np.clip(fhat, PROPENSITY_FLOOR, 1.0 - PROPENSITY_FLOOR)
    return NuisanceFit.from_surfaces(x, fhat, ghat1, ghat0)


def _cmd_estimate(args) -> int:
    columns = _read_columns(args.data)
    for name in (args.outcome, args.exposure):
        if name not in columns:
            raise UsageError(f"column {name!r} not in {args.data} "
                             f"(have: {', '.join(columns)})")
    if args.covariates:
        cov_names = [s.strip() for s in args.covariates.split(",") if s.strip()]
        missing = [c for c in cov_names if c not in columns]
        if missing:
            raise UsageError(f"covariate columns not in {args.data}: {missing}")
    else:
        cov_names = [c for c in columns if c not in (args.outcome, args.exposure)]
    if not cov_names:
        raise UsageError("no covariate columns left after outcome and exposure")

    y = columns[args.outcome]
    x_raw = columns[args.exposure]
    if not np.isin(x_raw, (0.0, 1.0)).all():
        raise DataError(f"exposure column {args.exposure!r} is not binary 0/1")
    x = x_raw.astype(np.int64)
    w = np.column_stack([columns[c] for c in cov_names])
    estimators = _parse_estimators(args.estimator)
    truncate = _parse_truncate(args.truncate)
    if not 0.0 < args.level < 1.0:
        raise UsageError("--level must lie strictly inside (0, 1)")

    try:
        nuisance = _user_nuisance(w, x, y, args.fit, args.folds, args.seed, truncate)
    except Exception as err:
        raise DataError(f"nuisance fitting failed: {err}")

    def gcomp_pipe(sample):
        ws, xs, ys = sample["w"], sample["x"], sample["y"]
        if args.fit == "parametric" or args.fast_bootstrap:
            base = np.column_stack([np.ones(len(xs)), ws])
            of = glm.fit_linear(np.column_stack([base, xs.astype(float)]), ys)
            g1 = glm.predict_linear(of, np.column_stack([base, np.ones(len(xs))]))
            g0 = glm.predict_linear(of, np.column_stack([base, np.zeros(len(xs))]))
        else:
            key = (args.seed, "user_boot")
            feats = np.column_stack([ws, xs.astype(float)])
            ens = fit_superlearner(default_library(key), feats, ys, args.folds,
                                   "real", key)
            g1 = ens.predict(np.column_stack([ws, np.ones(len(xs))]))
            g0 = ens.predict(np.column_stack([ws, np.zeros(len(xs))]))
        return gcomp_estimate(g1, g0).psi_hat

    for name in estimators:
        if name == "ipw":
            res = ipw_estimate(x, y, nuisance.fhat)
            se = ipw_robust_se(x, y, nuisance.fhat, res.psi_hat)
        elif name == "gcomp":
            res = gcomp_estimate(nuisance.ghat1, nuisance.ghat0)
            se = bootstrap_se({"w": w, "x": x, "y": y}, gcomp_pipe,
                              b=args.bootstrap_reps, seed=(args.seed, "user_se"))
        elif name == "aipw":
            res = aipw_estimate(x, y, nuisance)
            se = if_se(res.influence)
        else:
            res = tmle_estimate(x, y, nuisance)
            if res.influence is None:
                raise DataError("constant outcome makes the targeted update degenerate")
            se = if_se(res.influence)
        ci = wald_ci(res.psi_hat, se, args.level)
        print(f"{name},{res.psi_hat:.17g},{se:.17g},{ci.lo:.17g},{ci.hi:.17g}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# plot


def _cmd_plot(args) -> int:
    try:
        rows = harness.read_summary(args.summary)
    except FileNotFoundError:
        raise DataError(f"summary file not found: {args.summary}")
    except ValueError as err:
        raise DataError(str(err))
    if not rows:
        raise DataError(f"{args.summary} contains no summary rows")
    try:
        written = plot_summary(rows, args.metric, args.out)
    except OSError as err:
        raise DataError(f"cannot write plots under {args.out}: {err}")
    for path in written:
        print(path)
    return EXIT_OK


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required: simulate, estimate, or plot")
        if args.command == "simulate":
            return _cmd_simulate(args)
        if args.command == "estimate":
            return _cmd_estimate(args)
        return _cmd_plot(args)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except DataError as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except KeyboardInterrupt:
        raise
    except Exception as err:
        print(f"internal error: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
