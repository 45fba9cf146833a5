"""Closed-form propagation integrals against independent quadrature."""
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import norm

from twotiergp import _backend, _kernels_py
from twotiergp._backend import BACKEND
from twotiergp.errors import InputError
from twotiergp.oracle import exp_kernel_1d, mc_expect_kernel, quad_expect_kernel, sqexp_kernel_1d
from twotiergp.tier2 import ctilde2_exp, ctilde2_sqexp, ctilde_exp, ctilde_sqexp

try:
    from twotiergp import _ckernels
except ImportError:  # extension not built
    _ckernels = None

finite = dict(allow_nan=False, allow_infinity=False)
locs = st.floats(-5, 5, **finite)
sds = st.floats(0.01, 5, **finite)
scales = st.floats(0.1, 5, **finite)


@settings(max_examples=60, deadline=None)
@given(zi=locs, nu=locs, t=sds, b=scales)
def test_single_exp_matches_quadrature(zi, nu, t, b):
    ref = quad_expect_kernel(exp_kernel_1d(b), zi, nu, t, tol=1e-11)
    assert ctilde_exp([zi], nu, t, b)[0] == pytest.approx(ref, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(zi=locs, zj=locs, nu=locs, t=sds, b=scales)
def test_pair_exp_matches_quadrature(zi, zj, nu, t, b):
    ref = quad_expect_kernel(exp_kernel_1d(b), zi, nu, t, z_j=zj, tol=1e-11)
    assert ctilde2_exp(zi, zj, nu, t, b) == pytest.approx(ref, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(zi=locs, zj=locs, nu=locs, t=sds, b=scales)
def test_sqexp_forms_match_quadrature(zi, zj, nu, t, b):
    k = sqexp_kernel_1d(b)
    assert ctilde_sqexp([zi], nu, t, b)[0] == pytest.approx(quad_expect_kernel(k, zi, nu, t), abs=1e-9)
    assert ctilde2_sqexp(zi, zj, nu, t, b) == pytest.approx(quad_expect_kernel(k, zi, nu, t, z_j=zj), abs=1e-9)


def test_known_value_at_one_sd():
    # z_i = nu, t = b = 1: E exp(-|Z|) = 2 e^{1/2} Phi(-1)
    expected = 2.0 * math.exp(0.5) * norm.cdf(-1.0)
    assert ctilde_exp([0.0], 0.0, 1.0, 1.0)[0] == pytest.approx(expected, rel=1e-14)
    assert expected == pytest.approx(0.5232, abs=5e-5)


@pytest.mark.parametrize("fn", [ctilde_exp, ctilde_sqexp])
def test_zero_spread_recovers_kernel(fn):
    z = np.array([-1.0, 0.3, 2.0])
    b = 0.7
    got = fn(z, 0.5, 0.0, b)
    d = np.abs(z - 0.5)
    want = np.exp(-d / b) if fn is ctilde_exp else np.exp(-0.5 * d**2 / b**2)
    np.testing.assert_allclose(got, want, rtol=1e-15)


def test_continuity_as_spread_vanishes():
    z = np.array([-0.4, 0.0, 0.9])
    for t in (1e-4, 1e-6, 1e-8):
        np.testing.assert_allclose(ctilde_exp(z, 0.1, t, 1.0), ctilde_exp(z, 0.1, 0.0, 1.0), atol=5 * t)
        assert ctilde2_exp(-0.4, 0.9, 0.1, t, 1.0) == pytest.approx(ctilde2_exp(-0.4, 0.9, 0.1, 0.0, 1.0), abs=5 * t)


@pytest.mark.parametrize("t,b", [(1e-7, 1.0), (100.0, 1.0), (1.0, 1e-2), (30.0, 0.3), (1e-3, 50.0)])
def test_extreme_ratios_stay_finite_and_bounded(t, b):
    z = np.linspace(-20, 20, 41)
    for family, single, pair in ((0, ctilde_exp, ctilde2_exp), (1, ctilde_sqexp, ctilde2_sqexp)):
        v = single(z, 0.3, t, b)
        assert np.all(np.isfinite(v)) and np.all(v >= 0) and np.all(v <= 1 + 1e-15)
        p = pair(z[3], z[20], 0.3, t, b)
        assert math.isfinite(p) and 0 <= p <= 1 + 1e-15


def test_far_tail_matches_quadrature():
    # nu many sds from z_i: naive exp * Phi products underflow or overflow here
    for zi, nu, t, b in [(0.0, 12.0, 0.5, 0.05), (0.0, -9.0, 1.0, 0.1), (3.0, 3.0, 8.0, 0.2)]:
        ref = quad_expect_kernel(exp_kernel_1d(b), zi, nu, t, tol=1e-12)
        assert ctilde_exp([zi], nu, t, b)[0] == pytest.approx(ref, rel=1e-8, abs=1e-300)


@settings(max_examples=50, deadline=None)
@given(zi=locs, zj=locs, nu=locs, t=sds, b=scales)
def test_pair_integral_structure(zi, zj, nu, t, b):
    for single, pair in ((ctilde_exp, ctilde2_exp), (ctilde_sqexp, ctilde2_sqexp)):
        assert pair(zi, zj, nu, t, b) == pytest.approx(pair(zj, zi, nu, t, b), rel=1e-12, abs=1e-300)
        # E[c^2] >= (E c)^2
        ci = single([zi], nu, t, b)[0]
        assert pair(zi, zi, nu, t, b) >= ci * ci * (1 - 1e-10) - 1e-300
        # Cauchy-Schwarz: E[c_i c_j]^2 <= E[c_i^2] E[c_j^2]
        lhs = pair(zi, zj, nu, t, b) ** 2
        assert lhs <= pair(zi, zi, nu, t, b) * pair(zj, zj, nu, t, b) * (1 + 1e-10) + 1e-300


def test_monte_carlo_agrees_for_a_spread_of_points():
    z = np.array([-2.0, -0.3, 0.0, 0.4, 3.0])
    nu, t, b = 0.1, 0.8, 0.6
    est = mc_expect_kernel(exp_kernel_1d(b), z, nu, t, samples=200_000, seed=3)
    got = ctilde_exp(z, nu, t, b)
    for e, g in zip(est, got):
        assert abs(e.value - g) < 4 * e.std_error


def _pair_exp_mean_replaced_by_sd(zi, zj, nu, t, b):
    """Pair integral with t standing where the mean belongs in the tail exponents."""
    zm, zM = min(zi, zj), max(zi, zj)
    lo = math.exp((2 * t * t + (2 * t - zi - zj) * b) / b**2) * norm.cdf((zm - nu) / t - 2 * t / b)
    mid = math.exp(-(zM - zm) / b) * (norm.cdf((zM - nu) / t) - norm.cdf((zm - nu) / t))
    hi = math.exp((2 * t * t - (2 * t - zi - zj) * b) / b**2) * norm.sf((zM - nu) / t + 2 * t / b)
    return lo + mid + hi


def _pair_exp_with_mean(zi, zj, nu, t, b):
    zm, zM = min(zi, zj), max(zi, zj)
    lo = math.exp((2 * t * t + (2 * nu - zi - zj) * b) / b**2) * norm.cdf((zm - nu) / t - 2 * t / b)
    mid = math.exp(-(zM - zm) / b) * (norm.cdf((zM - nu) / t) - norm.cdf((zm - nu) / t))
    hi = math.exp((2 * t * t - (2 * nu - zi - zj) * b) / b**2) * norm.sf((zM - nu) / t + 2 * t / b)
    return lo + mid + hi


def test_pair_exp_tail_exponent_uses_mean():
    zi, zj, nu, t, b = 2.8, 3.5, 3.0, 0.4, 0.8
    ref = quad_expect_kernel(exp_kernel_1d(b), zi, nu, t, z_j=zj, tol=1e-12)
    assert _pair_exp_with_mean(zi, zj, nu, t, b) == pytest.approx(ref, rel=1e-10)
    assert ctilde2_exp(zi, zj, nu, t, b) == pytest.approx(ref, rel=1e-10)
    assert abs(_pair_exp_mean_replaced_by_sd(zi, zj, nu, t, b) - ref) > 1e-2


def test_pair_sqexp_separation_term_uses_4b2():
    zi, zj, nu, t, b = -0.5, 1.0, 0.2, 0.7, 0.9
    ref = quad_expect_kernel(sqexp_kernel_1d(b), zi, nu, t, z_j=zj, tol=1e-12)
    common = (1 + 2 * t * t / b**2) ** -0.5 * math.exp(-((nu - 0.5 * (zi + zj)) ** 2) / (b**2 + 2 * t * t))
    assert common * math.exp(-((zi - zj) ** 2) / (4 * b * b)) == pytest.approx(ref, rel=1e-12)
    assert abs(common * math.exp(-((zi - zj) ** 2) / (2 * b * b)) - ref) > 1e-2
    assert ctilde2_sqexp(zi, zj, nu, t, b) == pytest.approx(ref, rel=1e-12)


def test_argument_validation():
    with pytest.raises(InputError):
        ctilde_exp([0.0], 0.0, -1.0, 1.0)
    with pytest.raises(InputError):
        ctilde2_sqexp(0.0, 1.0, 0.0, 1.0, 0.0)


@pytest.mark.skipif(_ckernels is None, reason="compiled kernels not built")
@pytest.mark.parametrize("family", [0, 1])
def test_backends_agree(family):
    rng = np.random.default_rng(7)
    z = rng.normal(size=40)
    nu = rng.normal(size=5)
    t = np.array([0.0, 1e-6, 0.1, 1.0, 7.0])
    for q in range(5):
        np.testing.assert_allclose(
            _ckernels.ctilde_vector(z, nu[q], t[q], 0.7, family),
            _kernels_py.ctilde_vector(z, nu[q], t[q], 0.7, family), rtol=1e-12, atol=1e-300,
        )
        np.testing.assert_allclose(
            _ckernels.ctilde_matrix(z, nu[q], t[q], 0.7, family),
            _kernels_py.ctilde_matrix(z, nu[q], t[q], 0.7, family), rtol=1e-12, atol=1e-300,
        )
    np.testing.assert_allclose(
        _ckernels.ctilde_batch(z, nu, t, 0.7, family), _kernels_py.ctilde_batch(z, nu, t, 0.7, family),
        rtol=1e-12, atol=1e-300,
    )
    W = rng.normal(size=(40, 40))
    cx = rng.uniform(0, 1, 40)
    cx[::7] = 0.0
    Z = rng.normal(size=(40, 2))
    args = (W, cx, Z, nu[:2], t[2:4], np.array([0.7, 1.3]), family)
    assert _ckernels.weighted_pair_sum(*args) == pytest.approx(_kernels_py.weighted_pair_sum(*args), rel=1e-11)


def test_weighted_pair_sum_equals_dense_trace():
    rng = np.random.default_rng(1)
    N = 25
    W = rng.normal(size=(N, N))
    cx = rng.uniform(size=N)
    Z = rng.normal(size=(N, 2))
    nu, t, b = np.array([0.2, -0.1]), np.array([0.5, 0.3]), np.array([0.8, 1.2])
    C = _kernels_py.ctilde_matrix(Z[:, 0], nu[0], t[0], b[0], 0) * _kernels_py.ctilde_matrix(Z[:, 1], nu[1], t[1], b[1], 0)
    dense = np.sum(W * np.outer(cx, cx) * C)
    assert _backend.weighted_pair_sum(W, cx, Z, nu, t, b, 0) == pytest.approx(dense, rel=1e-12)


def test_backend_reported():
    assert BACKEND in ("cython", "python")
