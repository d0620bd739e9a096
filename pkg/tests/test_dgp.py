import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drbench import dgp, glm


def test_default_params_values():
    p = dgp.default_params()
    expected_theta = [-0.5, math.log(2), math.log(2.5), math.log(0.5),
                      math.log(1.5), math.log(1.75), math.log(1.5),
                      math.log(1.25), math.log(1.25), math.log(1.25), math.log(1.25)]
    np.testing.assert_allclose(p.theta, expected_theta, rtol=0, atol=0)
    np.testing.assert_array_equal(
        p.beta, [120.0, 3.5, 2.5, -1.0, 5.0, 2.0, 2.5, 1.5, 1.5, 1.5, 1.0])
    assert p.psi_true == 6.0
    assert p.sigma == 20.0


def test_params_length_validation():
    with pytest.raises(ValueError):
        dgp.DgpParams(theta=np.zeros(10), beta=np.zeros(11), psi_true=6, sigma=20)
    with pytest.raises(ValueError):
        dgp.DgpParams(theta=np.zeros(11), beta=np.zeros(12), psi_true=6, sigma=20)
    with pytest.raises(ValueError):
        dgp.DgpParams(theta=np.zeros(11), beta=np.zeros(11), psi_true=6, sigma=-1)


def test_sigma_zero_allowed():
    p = dgp.DgpParams(theta=np.zeros(11), beta=np.zeros(11), psi_true=6, sigma=0)
    assert p.sigma == 0


def test_expand_design_zero_and_ones():
    np.testing.assert_array_equal(
        dgp.expand_design([0, 0, 0, 0]), [1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0])
    np.testing.assert_array_equal(dgp.expand_design([1, 1, 1, 1]), np.ones(11))


def test_expand_design_hand_row():
    # pairwise products in fixed order C1C2, C1C3, C1C4, C2C3, C2C4, C3C4
    np.testing.assert_array_equal(
        dgp.expand_design([2, 3, 0, -1]),
        [1, 2, 3, 0, -1, 6, 0, -2, 0, -3, 0])


def test_expand_design_rejects_nonfinite():
    with pytest.raises(ValueError):
        dgp.expand_design([1, np.nan, 0, 0])
    with pytest.raises(ValueError):
        dgp.expand_design([1, 2, 3])


@given(st.lists(st.floats(-50, 50), min_size=8, max_size=8))
def test_design_matrix_matches_rowwise_expansion(flat):
    c = np.asarray(flat).reshape(2, 4)
    full = dgp.design_matrix(c)
    for i in range(2):
        np.testing.assert_array_equal(full[i], dgp.expand_design(c[i]))


def test_transform_zero_row():
    z = dgp.transform_confounders(np.zeros((1, 4)))
    np.testing.assert_allclose(z[0], [1.0, 10.0, 0.216, 400.0], rtol=1e-15)


def test_transform_hand_row():
    z = dgp.transform_confounders(np.array([[2.0, 1.0, -1.0, 0.5]]))
    expected = [math.exp(1.0),
                1.0 / (1.0 + math.exp(2.0)) + 10.0,
                (2.0 * -1.0 / 25.0 + 0.6) ** 3,
                (1.0 * 0.5 + 20.0) ** 2]
    np.testing.assert_allclose(z[0], expected, rtol=1e-15)


def test_transform_deterministic():
    c = dgp.gen_trial(40, dgp.default_params(), seed=11).c
    np.testing.assert_array_equal(dgp.transform_confounders(c),
                                  dgp.transform_confounders(c))


@given(st.floats(-20, 20), st.floats(-20, 20),
       st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3))
def test_transform_z1_monotone_in_c1(c1a, c1b, c2, c3, c4):
    lo, hi = sorted((c1a, c1b))
    z = dgp.transform_confounders(np.array([[lo, c2, c3, c4], [hi, c2, c3, c4]]))
    assert z[0, 0] <= z[1, 0]


def test_gen_trial_shapes_and_binary_exposure():
    data = dgp.gen_trial(50, dgp.default_params(), seed=0)
    assert data.n == 50
    assert data.x.shape == (50,) and data.y.shape == (50,)
    assert data.c.shape == (50, 4) and data.z.shape == (50, 4)
    assert set(np.unique(data.x)) <= {0, 1}


def test_gen_trial_bit_identical_reruns():
    a = dgp.gen_trial(300, dgp.default_params(), seed=(5, 7))
    b = dgp.gen_trial(300, dgp.default_params(), seed=(5, 7))
    np.testing.assert_array_equal(a.x, b.x)
    np.testing.assert_array_equal(a.y, b.y)
    np.testing.assert_array_equal(a.c, b.c)
    c = dgp.gen_trial(300, dgp.default_params(), seed=(5, 8))
    assert not np.array_equal(a.y, c.y)


def test_gen_trial_rejects_empty():
    with pytest.raises(ValueError):
        dgp.gen_trial(0, dgp.default_params(), seed=0)


def test_exposure_prevalence_matches_intercept():
    # theta = intercept only: long-run exposure rate is expit(intercept)
    theta = np.zeros(11)
    theta[0] = -0.5
    params = dgp.DgpParams(theta=theta, beta=np.zeros(11), psi_true=0, sigma=1)
    data = dgp.gen_trial(1_000_000, params, seed=99)
    target = 1.0 / (1.0 + math.exp(0.5))
    se = math.sqrt(target * (1 - target) / data.n)
    assert abs(data.x.mean() - target) < 3 * se
    assert abs(data.x.mean() - target) < 0.002


def test_noise_free_outcome_is_exactly_linear():
    params = dgp.DgpParams(theta=np.zeros(11),
                           beta=np.r_[120.0, np.zeros(10)], psi_true=6, sigma=0)
    data = dgp.gen_trial(200, params, seed=21)
    np.testing.assert_array_equal(data.y, 120.0 + 6.0 * data.x)


def test_noise_free_regression_recovers_coefficients():
    params = dgp.default_params()
    exact = dgp.DgpParams(theta=params.theta, beta=params.beta,
                          psi_true=params.psi_true, sigma=0.0)
    data = dgp.gen_trial(400, exact, seed=33)
    design = np.column_stack([dgp.design_matrix(data.c), data.x])
    fit = glm.fit_linear(design, data.y)
    np.testing.assert_allclose(fit.coef[:-1], params.beta, atol=1e-8)
    assert abs(fit.coef[-1] - params.psi_true) < 1e-8


def test_dataset_validates_z_consistency():
    data = dgp.gen_trial(10, dgp.default_params(), seed=1)
    with pytest.raises(ValueError):
        dgp.Dataset(x=data.x, y=data.y, c=data.c, z=data.z + 1.0)


def test_dataset_validates_exposure_entries():
    data = dgp.gen_trial(10, dgp.default_params(), seed=1)
    bad = data.x.copy()
    bad[0] = 2
    with pytest.raises(ValueError):
        dgp.Dataset(x=bad, y=data.y, c=data.c, z=data.z)


def test_take_rows_supports_bootstrap_duplicates():
    data = dgp.gen_trial(20, dgp.default_params(), seed=2)
    idx = np.array([0, 0, 5, 19, 5])
    sub = dgp.take_rows(data, idx)
    assert sub.n == 5
    np.testing.assert_array_equal(sub.y, data.y[idx])
    np.testing.assert_array_equal(sub.z, data.z[idx])


def test_save_load_round_trip(tmp_path):
    data = dgp.gen_trial(64, dgp.default_params(), seed=77)
    path = tmp_path / "cohort.csv"
    dgp.save_dataset(data, path)
    back = dgp.load_dataset(path)
    np.testing.assert_array_equal(back.x, data.x)
    np.testing.assert_array_equal(back.y, data.y)
    np.testing.assert_array_equal(back.c, data.c)
    np.testing.assert_array_equal(back.z, data.z)


def test_load_rejects_wrong_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(ValueError):
        dgp.load_dataset(path)
