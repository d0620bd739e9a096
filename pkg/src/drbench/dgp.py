"""Synthetic cohort generation for the benchmark.

A cohort has a binary exposure, a continuous outcome, four standard-normal
confounders, and a fixed nonlinear distortion of those confounders that an
analysis can use in place of the real ones to induce misspecification.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from math import log

import numpy as np
from scipy.special import expit

from .rng import substream

__all__ = [
    "DgpParams",
    "Dataset",
    "default_params",
    "expand_design",
    "design_matrix",
    "transform_confounders",
    "gen_trial",
    "take_rows",
    "save_dataset",
    "load_dataset",
]

N_CONFOUNDERS = 4
# fixed lexicographic interaction order; coefficient vectors follow it
INTERACTION_PAIRS = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))
DESIGN_WIDTH = 1 + N_CONFOUNDERS + len(INTERACTION_PAIRS)

CSV_HEADER = ["y", "x", "c1", "c2", "c3", "c4", "z1", "z2", "z3", "z4"]


@dataclass(frozen=True)
class DgpParams:
    """Coefficients of the generating models.

    ``theta`` sets the exposure log-odds and ``beta`` the outcome mean, each
    over the intercept, the four confounder mains, and the six two-way
    interactions in fixed lexicographic order. ``psi_true`` is the constant
    additive exposure effect and ``sigma`` the outcome noise SD.
    """

    theta: np.ndarray
    beta: np.ndarray
    psi_true: float
    sigma: float

    def __post_init__(self):
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=float))
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float))
        if self.theta.shape != (DESIGN_WIDTH,):
            raise ValueError(f"theta must have {DESIGN_WIDTH} entries, got {self.theta.shape}")
        if self.beta.shape != (DESIGN_WIDTH,):
            raise ValueError(f"beta must have {DESIGN_WIDTH} entries, got {self.beta.shape}")
        # sigma = 0 is allowed so noise-free checks can recover coefficients exactly
        if not self.sigma >= 0:
            raise ValueError(f"sigma must be nonnegative, got {self.sigma}")


@dataclass(frozen=True)
class Dataset:
    """One synthetic cohort: exposure ``x``, outcome ``y``, raw confounders
    ``c`` and their transformed image ``z``."""

    x: np.ndarray
    y: np.ndarray
    c: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=np.int64))
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float))
        object.__setattr__(self, "c", np.asarray(self.c, dtype=float))
        object.__setattr__(self, "z", np.asarray(self.z, dtype=float))
        n = self.y.shape[0]
        if n < 1:
            raise ValueError("dataset must have at least one row")
        if self.x.shape != (n,) or self.c.shape != (n, N_CONFOUNDERS) or self.z.shape != (n, N_CONFOUNDERS):
            raise ValueError("x, y, c, z must share the same number of rows")
        if not np.isin(self.x, (0, 1)).all():
            raise ValueError("exposure entries must be 0 or 1")
        if not np.array_equal(self.z, transform_confounders(self.c)):
            raise ValueError("z must be the transform of c")

    @property
    def n(self) -> int:
        return self.y.shape[0]


def default_params() -> DgpParams:
    """Benchmark coefficients: intercept-first exposure log-odds, outcome
    coefficients with intercept 120, effect 6, noise SD 20."""
    theta = np.array([
        -0.5, log(2), log(2.5), log(0.5), log(1.5),
        log(1.75), log(1.5), log(1.25), log(1.25), log(1.25), log(1.25),
    ])
    beta = np.array([120.0, 3.5, 2.5, -1.0, 5.0, 2.0, 2.5, 1.5, 1.5, 1.5, 1.0])
    return DgpParams(theta=theta, beta=beta, psi_true=6.0, sigma=20.0)


def expand_design(c_row) -> np.ndarray:
    """Expand one 4-vector of confounders to the 11-term design row
    [1, C1..C4, C1C2, C1C3, C1C4, C2C3, C2C4, C3C4]."""
    c_row = np.asarray(c_row, dtype=float)
    if c_row.shape != (N_CONFOUNDERS,):
        raise ValueError(f"expected {N_CONFOUNDERS} confounders, got shape {c_row.shape}")
    if not np.isfinite(c_row).all():
        raise ValueError("confounder values must be finite")
    return design_matrix(c_row[None, :])[0]


def design_matrix(c: np.ndarray) -> np.ndarray:
    """Row-wise ``expand_design`` for an n x 4 confounder matrix."""
    c = np.asarray(c, dtype=float)
    if c.ndim != 2 or c.shape[1] != N_CONFOUNDERS:
        raise ValueError(f"expected an n x {N_CONFOUNDERS} matrix, got shape {c.shape}")
    if not np.isfinite(c).all():
        raise ValueError("confounder values must be finite")
    cols = [np.ones(c.shape[0]), c[:, 0], c[:, 1], c[:, 2], c[:, 3]]
    cols += [c[:, i] * c[:, j] for i, j in INTERACTION_PAIRS]
    return np.column_stack(cols)


def transform_confounders(c: np.ndarray) -> np.ndarray:
    """Distort raw confounders into the observed-but-wrong covariates.

    Z1 = exp(C1/2); Z2 = C2/(1+exp(C1)) + 10; Z3 = (C1*C3/25 + 0.6)^3;
    Z4 = (C2*C4 + 20)^2. All four maps are total on finite reals.
    """
    c = np.asarray(c, dtype=float)
    if c.ndim != 2 or c.shape[1] != N_CONFOUNDERS:
        raise ValueError(f"expected an n x {N_CONFOUNDERS} matrix, got shape {c.shape}")
    z1 = np.exp(c[:, 0] / 2.0)
    z2 = c[:, 1] / (1.0 + np.exp(c[:, 0])) + 10.0
    z3 = (c[:, 0] * c[:, 2] / 25.0 + 0.6) ** 3
    z4 = (c[:, 1] * c[:, 3] + 20.0) ** 2
    return np.column_stack([z1, z2, z3, z4])


def gen_trial(n: int, params: DgpParams, seed) -> Dataset:
    """Draw one cohort of size ``n``.

    Confounders are iid standard normal, exposure is Bernoulli with logit
    linear in the interaction design, and the outcome adds the exposure
    effect and Gaussian noise to the design mean. ``seed`` may be an int or
    a tuple naming an RNG substream; the same seed reproduces the dataset
    bit for bit.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    key = seed if isinstance(seed, tuple) else (seed,)
    rng = substream("dgp", *key)
    c = rng.standard_normal((n, N_CONFOUNDERS))
    design = design_matrix(c)
    p_exposure = expit(design @ params.theta)
    x = (rng.random(n) < p_exposure).astype(np.int64)
    eps = rng.standard_normal(n)
    y = design @ params.beta + params.psi_true * x + params.sigma * eps
    return Dataset(x=x, y=y, c=c, z=transform_confounders(c))


def take_rows(ds: Dataset, idx: np.ndarray) -> Dataset:
    """Row-subset a dataset (used for bootstrap resamples)."""
    return Dataset(x=ds.x[idx], y=ds.y[idx], c=ds.c[idx], z=ds.z[idx])


def save_dataset(ds: Dataset, path) -> None:
    """Write a cohort as CSV with full double precision."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for i in range(ds.n):
            row = [f"{ds.y[i]:.17g}", str(int(ds.x[i]))]
            row += [f"{v:.17g}" for v in ds.c[i]]
            row += [f"{v:.17g}" for v in ds.z[i]]
            writer.writerow(row)


def load_dataset(path) -> Dataset:
    """Read a cohort written by :func:`save_dataset`."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != CSV_HEADER:
            raise ValueError(f"unexpected dataset header: {header}")
        rows = [r for r in reader if r]
    y = np.array([float(r[0]) for r in rows])
    x = np.array([int(r[1]) for r in rows], dtype=np.int64)
    c = np.array([[float(v) for v in r[2:6]] for r in rows])
    z = np.array([[float(v) for v in r[6:10]] for r in rows])
    return Dataset(x=x, y=y, c=c, z=z)
