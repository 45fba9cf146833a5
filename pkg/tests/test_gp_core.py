import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import multivariate_normal

from twotiergp.errors import FitError, InputError, NumericalError
from twotiergp.gp_core import (
    GaussianPredictive,
    GpModel,
    _NegLogMarginal,
    build_gp_model,
    canonical_order,
    gp_fit,
    gp_log_marginal,
    gp_predict,
    gp_predict_batch,
    median_spacing,
    multistart_minimize,
)
from twotiergp.kernels import KernelFamily, KernelSpec, gram_matrix


def _toy(n=60, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(0, 6, (n, 1))
    y = np.sin(X[:, 0]) + 0.05 * rng.standard_normal(n)
    return X, y


def test_log_marginal_matches_multivariate_normal():
    rng = np.random.default_rng(1)
    X = rng.uniform(0, 2, (9, 2))
    y = rng.normal(size=9)
    k = KernelSpec("exp", [0.7, 1.3], 1.8)
    cov = gram_matrix(k, X) + 0.2 * np.eye(9)
    ref = multivariate_normal(np.zeros(9), cov).logpdf(y)
    assert gp_log_marginal(k, 0.2, X, y) == pytest.approx(ref, rel=1e-12)


@pytest.mark.parametrize("family", [KernelFamily.EXPONENTIAL, KernelFamily.SQUARED_EXPONENTIAL])
@pytest.mark.parametrize("fit_signal", [False, True])
def test_objective_gradient_matches_finite_differences(family, fit_signal):
    rng = np.random.default_rng(2)
    X = rng.uniform(0, 3, (15, 2))
    y = rng.normal(size=15)
    obj = _NegLogMarginal(X, y, family, fit_signal)
    theta = np.array([0.1, -0.3, math.log(0.05)] + ([0.4] if fit_signal else []))
    _, grad = obj(theta)
    h = 1e-6
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        fd = (obj(theta + e)[0] - obj(theta - e)[0]) / (2 * h)
        assert grad[i] == pytest.approx(fd, rel=1e-5, abs=1e-7)


def test_objective_agrees_with_exact_log_marginal():
    rng = np.random.default_rng(3)
    X = rng.uniform(0, 3, (10, 1))
    y = rng.normal(size=10)
    obj = _NegLogMarginal(X, y, KernelFamily.SQUARED_EXPONENTIAL, True)
    theta = np.log([0.9, 0.1, 2.0])
    k = KernelSpec("sqexp", [0.9], 2.0)
    assert -obj(theta)[0] == pytest.approx(gp_log_marginal(k, 0.1, X, y), rel=1e-12)


def test_fit_recovers_smooth_function():
    X, y = _toy()
    m = gp_fit(X, y, kernel_family="sqexp", restarts=3)
    grid = np.linspace(0.5, 5.5, 30)[:, None]
    mean, var = gp_predict_batch(m, grid)
    assert np.max(np.abs(mean - np.sin(grid[:, 0]))) < 0.1
    assert np.all(var >= 0)
    # noise in standardized units is about (0.05 / sd(y))^2
    assert m.noise_variance * m.target_scale**2 == pytest.approx(0.05**2, rel=0.6)


def test_fit_is_row_order_invariant():
    X, y = _toy(40)
    perm = np.random.default_rng(9).permutation(40)
    a = gp_fit(X, y, restarts=2, seed=4)
    b = gp_fit(X[perm], y[perm], restarts=2, seed=4)
    assert a.kernel == b.kernel and a.noise_variance == b.noise_variance
    q = np.array([[1.234]])
    assert gp_predict(a, q) == gp_predict(b, q)


def test_fit_is_deterministic_for_fixed_seed():
    X, y = _toy(30)
    assert gp_fit(X, y, restarts=3, seed=5).log_marginal == gp_fit(X, y, restarts=3, seed=5).log_marginal


def test_more_restarts_never_worse():
    X, y = _toy(30, seed=4)
    assert gp_fit(X, y, restarts=6, seed=1).log_marginal >= gp_fit(X, y, restarts=1, seed=1).log_marginal - 1e-8


def test_unstandardized_fit_learns_signal_variance():
    X, y = _toy(50)
    m = gp_fit(X, 10 * y, standardize=False, restarts=2)
    assert m.target_scale == 1.0 and m.kernel.signal_variance > 1.0


def test_standardized_inputs_predict_in_raw_units():
    X, y = _toy(50)
    m = gp_fit(1000 * X, y, standardize_inputs=True, restarts=2)
    assert gp_predict(m, [3000.0]).mean == pytest.approx(np.sin(3.0), abs=0.1)


def test_interpolates_with_tiny_noise():
    X = np.linspace(0, 1, 8)[:, None]
    y = np.cos(3 * X[:, 0])
    m = gp_fit(X, y, init=[0.5, 1e-6], restarts=1)
    mean, var = gp_predict_batch(m, X)
    np.testing.assert_allclose(mean, y, atol=1e-3)
    assert np.all(var < 1e-3)


@settings(max_examples=25, deadline=None)
@given(q=st.floats(-10, 20, allow_nan=False))
def test_predictive_variance_bounded_by_prior(q):
    X, y = _toy(25)
    m = _fixed_model(X, y)
    p = gp_predict(m, [q])
    assert 0 <= p.variance <= m.target_scale**2 * m.kernel.signal_variance * (1 + 1e-12)
    assert gp_predict(m, [q], include_noise=True).variance >= p.variance


def _fixed_model(X, y):
    return build_gp_model(KernelSpec("exp", [1.0]), 0.01, X, y)


def test_round_trip_dict_preserves_predictions():
    X, y = _toy(30)
    m = gp_fit(X, y, restarts=2, standardize_inputs=True)
    m2 = GpModel.from_dict(m.to_dict())
    q = np.linspace(-1, 7, 11)[:, None]
    a, b = gp_predict_batch(m, q), gp_predict_batch(m2, q)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def test_input_validation():
    with pytest.raises(InputError):
        gp_fit(np.zeros((3, 1)), np.zeros(4))
    with pytest.raises(InputError):
        gp_fit(np.zeros((1, 1)), np.zeros(1))
    with pytest.raises(InputError):
        gp_fit(np.array([[0.0], [np.inf]]), np.zeros(2))
    with pytest.raises(InputError):
        gp_fit(np.zeros((3, 1)), np.zeros(3), init=[1.0])


def test_singular_likelihood_is_numerical_error():
    with pytest.raises(NumericalError):
        gp_log_marginal(KernelSpec("sqexp", [1.0]), 0.0, np.zeros((3, 1)), np.ones(3))


def test_all_restarts_failing_raises_fit_error():
    def broken(theta):
        raise NumericalError("boom")

    with pytest.raises(FitError, match="all 3 restarts failed"):
        multistart_minimize(broken, [np.zeros(1)] * 3, [(-1, 1)])


def test_nonfinite_objective_counts_as_failure():
    with pytest.raises(FitError):
        multistart_minimize(lambda th: (float("nan"), np.zeros(1)), [np.zeros(1)], [(-1, 1)])


def test_gaussian_predictive_rejects_negative_variance():
    with pytest.raises(InputError):
        GaussianPredictive(0.0, -1e-3)
    assert GaussianPredictive(1.0, 4.0).std == 2.0


def test_median_spacing_and_canonical_order():
    X = np.array([[3.0], [1.0], [1.0], [2.0]])
    assert median_spacing(X)[0] == 1.0
    assert median_spacing(np.zeros((5, 1)))[0] == 1.0
    order = canonical_order(np.array([2.0, 1.0, 1.0]), np.array([0.0, 5.0, 4.0]))
    assert list(order) == [2, 1, 0]


def test_single_point_log_marginal():
    k = KernelSpec("exp", [1.0], 1.0)
    assert gp_log_marginal(k, 0.0, np.zeros((1, 1)), np.zeros(1)) == pytest.approx(-0.5 * math.log(2 * math.pi))
    assert gp_log_marginal(k, 0.0, np.zeros((1, 1)), np.ones(1)) == pytest.approx(-0.5 * math.log(2 * math.pi) - 0.5)


def test_predict_matches_dense_conditioning():
    rng = np.random.default_rng(11)
    X = rng.uniform(0, 3, (5, 2))
    y = rng.normal(size=5)
    k = KernelSpec("sqexp", [0.8, 1.5], 1.0)
    m = build_gp_model(k, 0.05, X, y)
    q = rng.uniform(0, 3, 2)
    Kinv = np.linalg.inv(gram_matrix(k, X) + 0.05 * np.eye(5))
    kq = np.exp(-0.5 * np.sum(((X - q) / [0.8, 1.5]) ** 2, axis=1))
    p = gp_predict(m, q)
    assert p.mean == pytest.approx(kq @ Kinv @ y, rel=1e-10)
    assert p.variance == pytest.approx(1.0 - kq @ Kinv @ kq, rel=1e-10)


def test_far_query_reverts_to_prior():
    X, y = _toy(20)
    m = _fixed_model(X, y)
    p = gp_predict(m, [1e6])
    assert p.mean == pytest.approx(m.target_mean, abs=1e-12)
    assert p.variance == pytest.approx(m.target_scale**2 * m.kernel.signal_variance, rel=1e-12)


def test_fitted_log_marginal_beats_generating_values():
    X = np.array([[0.0], [0.7]])
    y = np.array([0.3, -0.2])
    m = gp_fit(X, y, standardize=False, restarts=4)
    assert m.log_marginal >= gp_log_marginal(KernelSpec("exp", [1.0], 1.0), 1e-2, X, y) - 1e-8


def test_recovers_generating_length_scales():
    rng = np.random.default_rng(12)
    X = rng.uniform(0, 10, (750, 2))
    K = gram_matrix(KernelSpec("exp", [1.0, 1.0]), X)
    y = np.linalg.cholesky(K + 1e-10 * np.eye(750)) @ rng.standard_normal(750) + 0.1 * rng.standard_normal(750)
    m = gp_fit(X, y, restarts=2, standardize=False)
    assert all(0.5 <= ell <= 2.0 for ell in m.kernel.length_scales)
