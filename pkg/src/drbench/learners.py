"""Nonparametric nuisance estimation via a stacked ensemble.

A small library of base learners (mean, GLMs, greedy regression trees,
bagged trees, k-nearest neighbors) is combined by cross-validated stacking:
out-of-fold squared-error risks feed a nonnegative least squares meta-fit
whose weights are normalized onto the simplex.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from math import ceil, sqrt
from typing import Callable

import numpy as np
from scipy.optimize import nnls

from . import glm
from .rng import substream

__all__ = [
    "Learner",
    "Ensemble",
    "EnsembleError",
    "fit_regression_tree",
    "fit_bagged_trees",
    "fit_knn",
    "fold_assignments",
    "cv_risks",
    "fit_superlearner",
    "default_library",
    "export_risk_table",
]

log = logging.getLogger(__name__)

PROBABILITY = "probability"
REAL = "real"


class EnsembleError(RuntimeError):
    """No usable base learner survived cross-validation."""


@dataclass(frozen=True)
class Learner:
    """A named fitting procedure: (features, targets, kind) -> predictor."""

    name: str
    fit: Callable[[np.ndarray, np.ndarray, str], object]


def _as_features(features) -> np.ndarray:
    x = np.ascontiguousarray(np.asarray(features, dtype=float))
    if x.ndim != 2:
        raise ValueError("features must be a 2-d matrix")
    return x


def _as_targets(targets, n: int) -> np.ndarray:
    y = np.asarray(targets, dtype=float)
    if y.shape != (n,):
        raise ValueError("targets must match the number of feature rows")
    return y


# ---------------------------------------------------------------------------
# greedy regression tree


@dataclass(frozen=True)
class TreePredictor:
    """Flat-array binary tree; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, features) -> np.ndarray:
        x = _as_features(features)
        nodes = np.zeros(x.shape[0], dtype=np.int64)
        while True:
            f = self.feature[nodes]
            rows = np.nonzero(f >= 0)[0]
            if rows.size == 0:
                break
            at = nodes[rows]
            go_left = x[rows, f[rows]] <= self.threshold[at]
            nodes[rows] = np.where(go_left, self.left[at], self.right[at])
        return self.value[nodes]


def _best_split(xn: np.ndarray, yn: np.ndarray, feats, min_leaf: int):
    """Best (feature, threshold) for one node, or None.

    Candidates are midpoints between consecutive distinct sorted values that
    leave both children with at least ``min_leaf`` rows. Equal gains go to
    the lowest feature index, then the lowest threshold.
    """
    m = yn.size
    k_lo, k_hi = min_leaf, m - min_leaf
    if k_hi < k_lo:
        return None
    best_score = -np.inf
    best = None
    for j in feats:
        v = xn[:, j]
        order = np.argsort(v, kind="stable")
        sv = v[order]
        distinct = sv[k_lo:k_hi + 1] > sv[k_lo - 1:k_hi]
        if not distinct.any():
            continue
        ks = np.nonzero(distinct)[0] + k_lo
        cum = np.cumsum(yn[order])
        total = cum[-1]
        left_sum = cum[ks - 1]
        right_sum = total - left_sum
        # maximizing this score minimizes the children's summed squared error
        score = left_sum * left_sum / ks + right_sum * right_sum / (m - ks)
        i = int(np.argmax(score))
        if score[i] > best_score:
            best_score = score[i]
            k = int(ks[i])
            best = (int(j), float((sv[k - 1] + sv[k]) / 2.0))
    return best


def _grow_tree(x, y, max_depth, min_leaf, mtry, rng) -> TreePredictor:
    p = x.shape[1]
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(mean):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(mean)
        return len(feature) - 1

    def build(xn, yn, depth):
        node = new_node(float(yn.mean()))
        if depth >= max_depth or yn.size < 2 * min_leaf or yn.min() == yn.max():
            return node
        if mtry is not None and mtry < p:
            feats = np.sort(rng.choice(p, size=mtry, replace=False))
        else:
            feats = range(p)
        found = _best_split(xn, yn, feats, min_leaf)
        if found is None:
            return node
        j, thr = found
        feature[node] = j
        threshold[node] = thr
        mask = xn[:, j] <= thr
        left[node] = build(xn[mask], yn[mask], depth + 1)
        right[node] = build(xn[~mask], yn[~mask], depth + 1)
        return node

    build(x, y, 0)
    return TreePredictor(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        value=np.asarray(value),
    )


def fit_regression_tree(features, targets, max_depth: int, min_leaf: int) -> TreePredictor:
    """Greedy CART-style regression tree.

    Splits minimize within-node squared error over midpoints between sorted
    distinct values; leaves predict the node mean. Growth stops at
    ``max_depth``, when a child would fall under ``min_leaf`` rows, or on a
    zero-variance node.
    """
    x = _as_features(features)
    if x.shape[0] == 0:
        raise ValueError("cannot fit a tree to empty data")
    y = _as_targets(targets, x.shape[0])
    if max_depth < 0 or min_leaf < 1:
        raise ValueError("max_depth must be >= 0 and min_leaf >= 1")
    return _grow_tree(x, y, max_depth, min_leaf, mtry=None, rng=None)


@dataclass(frozen=True)
class ForestPredictor:
    """Average of bootstrap-fitted trees."""

    trees: tuple

    def predict(self, features) -> np.ndarray:
        x = _as_features(features)
        acc = np.zeros(x.shape[0])
        for t in self.trees:
            acc += t.predict(x)
        return acc / len(self.trees)


def fit_bagged_trees(features, targets, n_trees: int, max_depth: int, min_leaf: int,
                     mtry: int, seed, bootstrap: bool = True) -> ForestPredictor:
    """Bagged regression trees with per-node feature subsampling.

    Each tree draws its bootstrap rows and per-node ``mtry`` feature subsets
    from its own RNG substream, so fits are reproducible regardless of
    execution order.
    """
    x = _as_features(features)
    if x.shape[0] == 0:
        raise ValueError("cannot fit trees to empty data")
    y = _as_targets(targets, x.shape[0])
    n, p = x.shape
    if n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    if not 1 <= mtry <= p:
        raise ValueError(f"mtry must be in [1, {p}], got {mtry}")
    key = seed if isinstance(seed, tuple) else (seed,)
    trees = []
    for t in range(n_trees):
        rng = substream("bagged_tree", *key, t)
        if bootstrap:
            rows = rng.integers(0, n, size=n)
            xb, yb = x[rows], y[rows]
        else:
            xb, yb = x, y
        trees.append(_grow_tree(xb, yb, max_depth, min_leaf, mtry, rng))
    return ForestPredictor(trees=tuple(trees))


# ---------------------------------------------------------------------------
# k-nearest neighbors


@dataclass(frozen=True)
class KnnPredictor:
    """Mean target of the k nearest training rows in standardized
    coordinates; distance ties favor the lower training-row index."""

    train: np.ndarray
    targets: np.ndarray
    center: np.ndarray
    scale: np.ndarray
    k: int

    def predict(self, features) -> np.ndarray:
        x = _as_features(features)
        q = (x - self.center) / self.scale
        m, n = q.shape[0], self.train.shape[0]
        d2 = np.zeros((m, n))
        for j in range(q.shape[1]):
            d2 += (q[:, j][:, None] - self.train[:, j][None, :]) ** 2
        if self.k >= n:
            return np.full(m, self.targets.mean())
        nearest = np.argsort(d2, axis=1, kind="stable")[:, :self.k]
        return self.targets[nearest].mean(axis=1)


def fit_knn(features, targets, k: int) -> KnnPredictor:
    """k-NN regression on per-feature standardized coordinates."""
    x = _as_features(features)
    y = _as_targets(targets, x.shape[0])
    n = x.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    center = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale == 0] = 1.0
    return KnnPredictor(train=(x - center) / scale, targets=y.copy(),
                        center=center, scale=scale, k=k)


# ---------------------------------------------------------------------------
# cross-validated stacking


def fold_assignments(n: int, folds: int, seed) -> np.ndarray:
    """Assign rows to folds by a seeded permutation, sizes within one."""
    if folds < 2:
        raise ValueError("need at least 2 folds")
    if n < folds:
        raise ValueError(f"need at least as many rows ({n}) as folds ({folds})")
    key = seed if isinstance(seed, tuple) else (seed,)
    perm = substream("cv_folds", *key).permutation(n)
    fold_id = np.empty(n, dtype=np.int64)
    base, extra = divmod(n, folds)
    start = 0
    for f in range(folds):
        size = base + (1 if f < extra else 0)
        fold_id[perm[start:start + size]] = f
        start += size
    return fold_id


def cv_risks(library, features, targets, folds: int, kind: str, seed):
    """Out-of-fold squared-error risk per learner.

    Returns ``(risks, oof)`` where ``oof`` is the n x k out-of-fold
    prediction matrix. A learner that raises on any fold gets risk +inf and
    a NaN column.
    """
    x = _as_features(features)
    y = _as_targets(targets, x.shape[0])
    n = x.shape[0]
    fold_id = fold_assignments(n, folds, seed)
    k = len(library)
    oof = np.full((n, k), np.nan)
    failed = np.zeros(k, dtype=bool)
    for f in range(folds):
        test = fold_id == f
        train = ~test
        for j, learner in enumerate(library):
            if failed[j]:
                continue
            try:
                predictor = learner.fit(x[train], y[train], kind)
                oof[test, j] = predictor.predict(x[test])
            except Exception:
                failed[j] = True
                log.warning("learner %r failed on fold %d; excluded", learner.name, f)
    risks = np.full(k, np.inf)
    for j in range(k):
        if not failed[j]:
            risks[j] = float(np.mean((oof[:, j] - y) ** 2))
    return risks, oof


@dataclass(frozen=True)
class Ensemble:
    """Convex combination of refit base learners."""

    names: tuple
    predictors: tuple
    weights: np.ndarray
    cv_risks: np.ndarray
    kind: str

    def predict(self, features) -> np.ndarray:
        x = _as_features(features)
        out = np.zeros(x.shape[0])
        for w, predictor in zip(self.weights, self.predictors):
            if w > 0 and predictor is not None:
                out += w * predictor.predict(x)
        if self.kind == PROBABILITY:
            out = np.clip(out, 0.0, 1.0)
        return out


def fit_superlearner(library, features, targets, folds: int, kind: str, seed) -> Ensemble:
    """Stack a learner library by cross-validation.

    Meta-weights come from nonnegative least squares on the out-of-fold
    prediction matrix, normalized to sum one; an all-zero solution falls
    back to full weight on the lowest-risk learner. Base learners are then
    refit on the full data. Probability-kind predictions are clamped to
    [0, 1].
    """
    if kind not in (PROBABILITY, REAL):
        raise ValueError(f"kind must be {PROBABILITY!r} or {REAL!r}")
    if not library:
        raise EnsembleError("the learner library is empty")
    x = _as_features(features)
    y = _as_targets(targets, x.shape[0])
    risks, oof = cv_risks(library, x, y, folds, kind, seed)

    predictors = []
    usable = []
    for j, learner in enumerate(library):
        if not np.isfinite(risks[j]):
            predictors.append(None)
            continue
        try:
            predictors.append(learner.fit(x, y, kind))
            usable.append(j)
        except Exception:
            predictors.append(None)
            log.warning("learner %r failed on the full data; excluded", learner.name)
    if not usable:
        raise EnsembleError("all base learners failed")

    usable = np.asarray(usable, dtype=np.int64)
    a = oof[:, usable]
    w_usable, _ = nnls(a, y)
    if w_usable.sum() <= 0:
        w_usable = np.zeros(len(usable))
        w_usable[int(np.argmin(risks[usable]))] = 1.0
    w_usable = w_usable / w_usable.sum()
    # normalization can only be trusted to beat the best single learner when
    # the NNLS scale was near one; fall back to that learner otherwise
    blend_risk = float(np.mean((a @ w_usable - y) ** 2))
    best = int(np.argmin(risks[usable]))
    if blend_risk > risks[usable][best] + 1e-12:
        w_usable = np.zeros(len(usable))
        w_usable[best] = 1.0

    weights = np.zeros(len(library))
    weights[usable] = w_usable
    return Ensemble(
        names=tuple(l.name for l in library),
        predictors=tuple(predictors),
        weights=weights,
        cv_risks=risks,
        kind=kind,
    )


def export_risk_table(ensemble: Ensemble, path) -> None:
    """Write ``learner,cv_risk,weight`` rows for a fitted ensemble."""
    with open(path, "w") as fh:
        fh.write("learner,cv_risk,weight\n")
        for name, risk, weight in zip(ensemble.names, ensemble.cv_risks, ensemble.weights):
            fh.write(f"{name},{risk:.17g},{weight:.17g}\n")


# ---------------------------------------------------------------------------
# default library


@dataclass(frozen=True)
class _MeanPredictor:
    mean: float

    def predict(self, features) -> np.ndarray:
        x = _as_features(features)
        return np.full(x.shape[0], self.mean)


def _glm_design(x: np.ndarray, interactions: bool) -> np.ndarray:
    cols = [np.ones(x.shape[0])] + [x[:, j] for j in range(x.shape[1])]
    if interactions:
        p = x.shape[1]
        cols += [x[:, i] * x[:, j] for i in range(p) for j in range(i + 1, p)]
    return np.column_stack(cols)


@dataclass(frozen=True)
class _GlmPredictor:
    fit: object
    interactions: bool
    kind: str

    def predict(self, features) -> np.ndarray:
        design = _glm_design(_as_features(features), self.interactions)
        if self.kind == PROBABILITY:
            return glm.predict_logistic(self.fit, design)
        return glm.predict_linear(self.fit, design)


def _make_glm_learner(name: str, interactions: bool) -> Learner:
    def fit(features, targets, kind):
        design = _glm_design(_as_features(features), interactions)
        if kind == PROBABILITY:
            fitted = glm.fit_logistic(design, targets)
        else:
            fitted = glm.fit_linear(design, targets)
        return _GlmPredictor(fit=fitted, interactions=interactions, kind=kind)

    return Learner(name=name, fit=fit)


def default_library(seed=0) -> list[Learner]:
    """The reduced stacking library: a constant, linear and interaction
    GLMs, two tree depths, bagged trees, and two k-NN smoothers."""

    def fit_mean(features, targets, kind):
        return _MeanPredictor(mean=float(np.asarray(targets, dtype=float).mean()))

    def make_tree(depth):
        def fit(features, targets, kind):
            return fit_regression_tree(features, targets, max_depth=depth, min_leaf=5)

        return fit

    def fit_bagged(features, targets, kind):
        p = _as_features(features).shape[1]
        return fit_bagged_trees(features, targets, n_trees=100, max_depth=8,
                                min_leaf=5, mtry=ceil(sqrt(p)), seed=_seed_key(seed))

    def make_knn(k):
        def fit(features, targets, kind):
            n = _as_features(features).shape[0]
            return fit_knn(features, targets, k=min(k, n))

        return fit

    return [
        Learner("mean", fit_mean),
        _make_glm_learner("glm_main", interactions=False),
        _make_glm_learner("glm_twoway", interactions=True),
        Learner("tree_d4", make_tree(4)),
        Learner("tree_d8", make_tree(8)),
        Learner("bagged_trees", fit_bagged),
        Learner("knn_5", make_knn(5)),
        Learner("knn_20", make_knn(20)),
    ]


def _seed_key(seed) -> tuple:
    return seed if isinstance(seed, tuple) else (seed,)
