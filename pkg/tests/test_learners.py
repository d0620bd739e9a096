import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drbench import learners
from drbench.learners import (Learner, cv_risks, default_library, export_risk_table,
                              fit_bagged_trees, fit_knn, fit_regression_tree,
                              fit_superlearner, fold_assignments)


def _constant_learner(name, value):
    class P:
        def predict(self, features):
            return np.full(np.asarray(features).shape[0], float(value))

    return Learner(name, lambda f, t, kind: P())


def _failing_learner(name="broken"):
    def fit(features, targets, kind):
        raise ValueError("always fails")

    return Learner(name, fit)


def _mean_learner():
    return Learner("mean", default_library()[0].fit)


# ---------------------------------------------------------------------------
# regression tree


def test_tree_depth_zero_is_global_mean():
    x = np.arange(10.0).reshape(-1, 1)
    y = np.arange(10.0)
    t = fit_regression_tree(x, y, max_depth=0, min_leaf=1)
    np.testing.assert_allclose(t.predict(x), np.full(10, 4.5))


def test_tree_fits_step_function_exactly():
    x = np.linspace(-1, 1, 30).reshape(-1, 1)
    y = (x[:, 0] > 0).astype(float)
    t = fit_regression_tree(x, y, max_depth=1, min_leaf=1)
    assert ((t.predict(x) - y) ** 2).mean() == 0.0


def test_tree_rejects_empty_and_bad_args():
    with pytest.raises(ValueError):
        fit_regression_tree(np.empty((0, 2)), np.empty(0), 2, 1)
    x = np.arange(4.0).reshape(-1, 1)
    with pytest.raises(ValueError):
        fit_regression_tree(x, np.arange(4.0), -1, 1)
    with pytest.raises(ValueError):
        fit_regression_tree(x, np.arange(4.0), 2, 0)


def test_tree_feature_tie_breaks_to_lowest_index():
    # mirrored features induce identical partitions and identical gains
    x = np.array([[0.0, 3.0], [1.0, 2.0], [2.0, 1.0], [3.0, 0.0]])
    y = np.array([0.0, 0.0, 1.0, 1.0])
    t = fit_regression_tree(x, y, max_depth=1, min_leaf=1)
    assert t.feature[0] == 0


def test_tree_threshold_tie_breaks_to_lowest():
    # splits after row 0 and before row 3 give equal gain; lowest wins
    x = np.array([[0.0], [1.0], [2.0], [3.0]])
    y = np.array([1.0, 0.0, 0.0, 1.0])
    t = fit_regression_tree(x, y, max_depth=1, min_leaf=1)
    assert t.feature[0] == 0
    assert t.threshold[0] == 0.5


def test_tree_zero_variance_node_stops():
    x = np.arange(8.0).reshape(-1, 1)
    t = fit_regression_tree(x, np.full(8, 3.25), max_depth=4, min_leaf=1)
    assert len(t.feature) == 1 and t.feature[0] == -1
    np.testing.assert_array_equal(t.predict(x), np.full(8, 3.25))


def test_tree_min_leaf_respected():
    x = np.arange(6.0).reshape(-1, 1)
    y = np.array([0.0, 0.0, 0.0, 0.0, 0.0, 100.0])
    t = fit_regression_tree(x, y, max_depth=1, min_leaf=3)
    # the variance-optimal split 4|5 is forbidden; both children need 3 rows
    assert t.threshold[0] == 2.5


def _oracle_tree_predict(x, y, max_depth, min_leaf, query):
    """Exhaustive greedy reference: try every (feature, midpoint) split."""

    def best_split(xn, yn):
        m = len(yn)
        best = None
        best_score = -np.inf
        for j in range(xn.shape[1]):
            order = np.argsort(xn[:, j], kind="stable")
            sv = xn[order, j]
            sy = yn[order]
            for k in range(min_leaf, m - min_leaf + 1):
                if sv[k] <= sv[k - 1]:
                    continue
                s_left = float(np.sum(sy[:k]))
                s_right = float(np.sum(sy[k:]))
                score = s_left * s_left / k + s_right * s_right / (m - k)
                if score > best_score:
                    best_score = score
                    best = (j, (sv[k - 1] + sv[k]) / 2.0)
        return best

    def predict_one(xn, yn, depth, q):
        if depth >= max_depth or len(yn) < 2 * min_leaf or yn.min() == yn.max():
            return yn.mean()
        found = best_split(xn, yn)
        if found is None:
            return yn.mean()
        j, thr = found
        mask = xn[:, j] <= thr
        if q[j] <= thr:
            return predict_one(xn[mask], yn[mask], depth + 1, q)
        return predict_one(xn[~mask], yn[~mask], depth + 1, q)

    return np.array([predict_one(x, y, 0, q) for q in query])


def test_tree_matches_oracle_on_eight_point_instance():
    x = np.array([[0.0, 1.0], [1.0, 0.0], [2.0, 3.0], [3.0, 2.0],
                  [4.0, 5.0], [5.0, 4.0], [6.0, 7.0], [7.0, 6.0]])
    y = np.array([5.0, 3.0, 8.0, 1.0, 9.0, 2.0, 7.0, 4.0])
    t = fit_regression_tree(x, y, max_depth=2, min_leaf=1)
    np.testing.assert_array_equal(t.predict(x),
                                  _oracle_tree_predict(x, y, 2, 1, x))


@given(
    st.integers(2, 12).flatmap(lambda n: st.tuples(
        st.just(n),
        st.lists(st.integers(0, 5), min_size=n, max_size=n),
        st.lists(st.integers(0, 5), min_size=n, max_size=n),
        st.lists(st.integers(-8, 8), min_size=n, max_size=n),
    )),
    st.integers(1, 2), st.integers(1, 2), st.integers(1, 2),
)
@settings(max_examples=120, deadline=None)
def test_tree_matches_exhaustive_oracle(bundle, p, max_depth, min_leaf):
    n, f1, f2, targets = bundle
    # integer-valued data keeps split scores exactly representable, so the
    # vectorized search and the plain loop agree bitwise even on ties
    cols = [np.asarray(f1, dtype=float)]
    if p == 2:
        cols.append(np.asarray(f2, dtype=float))
    x = np.column_stack(cols)
    y = np.asarray(targets, dtype=float)
    t = fit_regression_tree(x, y, max_depth=max_depth, min_leaf=min_leaf)
    np.testing.assert_array_equal(
        t.predict(x), _oracle_tree_predict(x, y, max_depth, min_leaf, x))


# ---------------------------------------------------------------------------
# bagged trees


def test_bagging_degenerates_to_single_tree():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((40, 3))
    y = rng.standard_normal(40)
    forest = fit_bagged_trees(x, y, n_trees=1, max_depth=3, min_leaf=2,
                              mtry=3, seed=5, bootstrap=False)
    tree = fit_regression_tree(x, y, max_depth=3, min_leaf=2)
    np.testing.assert_array_equal(forest.predict(x), tree.predict(x))


def test_bagging_constant_targets():
    x = np.arange(20.0).reshape(-1, 1)
    forest = fit_bagged_trees(x, np.full(20, 7.5), n_trees=10, max_depth=4,
                              min_leaf=1, mtry=1, seed=2)
    np.testing.assert_array_equal(forest.predict(x), np.full(20, 7.5))


def test_bagging_deterministic_given_seed():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((60, 4))
    y = rng.standard_normal(60)
    a = fit_bagged_trees(x, y, 25, 5, 2, 2, seed=("forest", 9))
    b = fit_bagged_trees(x, y, 25, 5, 2, 2, seed=("forest", 9))
    np.testing.assert_array_equal(a.predict(x), b.predict(x))


def test_bagging_variance_shrinks_with_more_trees():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((80, 2))
    y = x[:, 0] + 0.5 * rng.standard_normal(80)
    query = rng.standard_normal((15, 2))
    preds = {10: [], 100: []}
    for n_trees in preds:
        for seed in range(20):
            f = fit_bagged_trees(x, y, n_trees, 4, 2, 1, seed=("var", seed))
            preds[n_trees].append(f.predict(query))
    var10 = np.var(np.asarray(preds[10]), axis=0).mean()
    var100 = np.var(np.asarray(preds[100]), axis=0).mean()
    assert var100 < var10


def test_bagging_validates_args():
    x = np.arange(10.0).reshape(-1, 1)
    y = np.arange(10.0)
    with pytest.raises(ValueError):
        fit_bagged_trees(x, y, 0, 2, 1, 1, seed=0)
    with pytest.raises(ValueError):
        fit_bagged_trees(x, y, 5, 2, 1, 2, seed=0)  # mtry > p


# ---------------------------------------------------------------------------
# k nearest neighbors


def test_knn_k_equal_n_is_global_mean():
    x = np.arange(12.0).reshape(-1, 1)
    y = np.arange(12.0) ** 2
    k = fit_knn(x, y, k=12)
    np.testing.assert_allclose(k.predict(np.array([[100.0], [0.0]])), y.mean())


def test_knn_k1_at_training_point():
    x = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 0.5]])
    y = np.array([3.0, 5.0, 9.0])
    k = fit_knn(x, y, k=1)
    np.testing.assert_array_equal(k.predict(x), y)


def test_knn_two_neighbor_midpoint():
    x = np.array([[0.0], [1.0], [2.0], [3.0], [10.0]])
    y = np.array([0.0, 10.0, 20.0, 30.0, 40.0])
    k = fit_knn(x, y, k=2)
    # query at 0.5: rows 0 and 1 are provably closest
    assert k.predict(np.array([[0.5]]))[0] == 5.0


def test_knn_distance_tie_prefers_lower_row_index():
    x = np.array([[0.0], [1.0], [2.0], [3.0], [4.0]])
    y = np.array([0.0, 10.0, 20.0, 30.0, 40.0])
    k = fit_knn(x, y, k=1)
    # 1.5 is exactly between rows 1 and 2 after standardization
    assert k.predict(np.array([[1.5]]))[0] == 10.0


def test_knn_constant_feature_handled():
    x = np.column_stack([np.arange(6.0), np.full(6, 2.0)])
    y = np.arange(6.0)
    k = fit_knn(x, y, k=1)
    np.testing.assert_array_equal(k.predict(x), y)


def test_knn_k_out_of_range():
    x = np.arange(5.0).reshape(-1, 1)
    with pytest.raises(ValueError):
        fit_knn(x, np.arange(5.0), k=0)
    with pytest.raises(ValueError):
        fit_knn(x, np.arange(5.0), k=6)


# ---------------------------------------------------------------------------
# cross-validation and stacking


def test_fold_assignments_near_equal_cover():
    fa = fold_assignments(23, 5, seed=3)
    sizes = np.bincount(fa, minlength=5)
    assert sizes.sum() == 23
    assert sizes.max() - sizes.min() <= 1
    with pytest.raises(ValueError):
        fold_assignments(10, 1, seed=0)
    with pytest.raises(ValueError):
        fold_assignments(3, 4, seed=0)


def test_cv_risk_zero_for_mean_on_constant_targets():
    x = np.arange(8.0).reshape(-1, 1)
    risks, oof = cv_risks([_mean_learner()], x, np.full(8, 2.5), 4, "real", 0)
    assert risks[0] == 0.0
    np.testing.assert_array_equal(oof[:, 0], np.full(8, 2.5))


def test_cv_identical_learners_identical_risks():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((30, 2))
    y = rng.standard_normal(30)
    risks, oof = cv_risks([_mean_learner(), _mean_learner()], x, y, 5, "real", 1)
    assert risks[0] == risks[1]
    np.testing.assert_array_equal(oof[:, 0], oof[:, 1])


def test_cv_hand_example_two_folds():
    # seed 1 splits rows {0,1} | {2,3}; assert that precondition first
    fa = fold_assignments(4, 2, seed=1)
    assert set(np.nonzero(fa == fa[0])[0]) == {0, 1}
    x = np.arange(4.0).reshape(-1, 1)
    y = np.array([0.0, 0.0, 4.0, 4.0])
    risks, oof = cv_risks([_mean_learner()], x, y, 2, "real", 1)
    np.testing.assert_array_equal(oof[:, 0], [4.0, 4.0, 0.0, 0.0])
    assert risks[0] == 16.0


def test_cv_failing_learner_gets_infinite_risk():
    x = np.arange(10.0).reshape(-1, 1)
    y = np.arange(10.0)
    risks, oof = cv_risks([_mean_learner(), _failing_learner()], x, y, 5, "real", 0)
    assert np.isfinite(risks[0])
    assert risks[1] == np.inf
    assert np.isnan(oof[:, 1]).all()


def test_superlearner_single_mean_learner():
    x = np.arange(10.0).reshape(-1, 1)
    y = np.arange(10.0)
    ens = fit_superlearner([_mean_learner()], x, y, 5, "real", 0)
    np.testing.assert_array_equal(ens.weights, [1.0])
    np.testing.assert_allclose(ens.predict(np.array([[99.0]])), y.mean())


def test_superlearner_exact_fit_column_takes_all_weight():
    def exact(features, targets, kind):
        class P:
            def predict(self, q):
                return (np.asarray(q)[:, 0] > 9.5) * 4.0

        return P()

    x = np.arange(20.0).reshape(-1, 1)
    y = (x[:, 0] > 9.5) * 4.0
    ens = fit_superlearner([Learner("exact", exact), _mean_learner()],
                           x, y, 5, "real", 0)
    assert ens.weights[0] == pytest.approx(1.0, abs=1e-8)
    assert ens.cv_risks[0] == 0.0
    oof_risk = float(np.mean((ens.predict(x) - y) ** 2))
    assert oof_risk < 1e-16


def test_superlearner_zero_nnls_falls_back_to_best_vertex():
    # all learners predict positive constants for negative targets: NNLS
    # returns the zero vector, so the lowest-risk learner takes weight 1
    x = np.arange(8.0).reshape(-1, 1)
    y = np.full(8, -1.0)
    ens = fit_superlearner([_constant_learner("one", 1.0),
                            _constant_learner("two", 2.0)], x, y, 4, "real", 0)
    np.testing.assert_array_equal(ens.weights, [1.0, 0.0])


def test_superlearner_failed_learners_excluded():
    x = np.arange(12.0).reshape(-1, 1)
    y = np.arange(12.0)
    ens = fit_superlearner([_failing_learner(), _mean_learner()], x, y, 4, "real", 0)
    assert ens.weights[0] == 0.0
    assert ens.weights[1] == 1.0
    with pytest.raises(learners.EnsembleError):
        fit_superlearner([_failing_learner()], x, y, 4, "real", 0)
    with pytest.raises(learners.EnsembleError):
        fit_superlearner([], x, y, 4, "real", 0)


def test_superlearner_weights_on_simplex_and_risk_optimal():
    rng = np.random.default_rng(9)
    x = rng.standard_normal((80, 3))
    y = x[:, 0] - 2.0 * x[:, 1] ** 2 + 0.3 * rng.standard_normal(80)
    ens = fit_superlearner(default_library(17), x, y, 5, "real", 17)
    assert (ens.weights >= 0).all()
    assert ens.weights.sum() == pytest.approx(1.0, abs=1e-8)
    assert (ens.cv_risks[np.isfinite(ens.cv_risks)] >= 0).all()
    risks, oof = cv_risks(default_library(17), x, y, 5, "real", 17)
    blend = float(np.mean((oof @ ens.weights - y) ** 2))
    assert blend <= risks.min() + 1e-8


def test_superlearner_probability_kind_clamped():
    rng = np.random.default_rng(13)
    x = rng.standard_normal((60, 2))
    y = (rng.random(60) < 0.5).astype(float)
    ens = fit_superlearner(default_library(4), x, y, 5, "probability", 4)
    preds = ens.predict(20.0 * rng.standard_normal((50, 2)))
    assert (preds >= 0.0).all() and (preds <= 1.0).all()


def test_superlearner_deterministic():
    rng = np.random.default_rng(21)
    x = rng.standard_normal((50, 3))
    y = rng.standard_normal(50)
    a = fit_superlearner(default_library(("d", 1)), x, y, 5, "real", ("d", 1))
    b = fit_superlearner(default_library(("d", 1)), x, y, 5, "real", ("d", 1))
    np.testing.assert_array_equal(a.weights, b.weights)
    q = rng.standard_normal((20, 3))
    np.testing.assert_array_equal(a.predict(q), b.predict(q))


def test_superlearner_rejects_unknown_kind():
    x = np.arange(10.0).reshape(-1, 1)
    with pytest.raises(ValueError):
        fit_superlearner([_mean_learner()], x, np.arange(10.0), 5, "ordinal", 0)


def test_default_library_composition():
    names = [l.name for l in default_library(0)]
    assert names == ["mean", "glm_main", "glm_twoway", "tree_d4", "tree_d8",
                     "bagged_trees", "knn_5", "knn_20"]


def test_risk_table_export(tmp_path):
    x = np.arange(16.0).reshape(-1, 1)
    y = np.arange(16.0)
    ens = fit_superlearner([_mean_learner(), _constant_learner("c0", 0.0)],
                           x, y, 4, "real", 0)
    path = tmp_path / "risks.csv"
    export_risk_table(ens, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "learner,cv_risk,weight"
    assert len(lines) == 3
    name, risk, weight = lines[1].split(",")
    assert name == "mean"
    assert float(risk) == ens.cv_risks[0]
    assert float(weight) == ens.weights[0]
