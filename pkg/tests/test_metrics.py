import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import norm

from twotiergp.errors import InputError
from twotiergp.metrics import evaluate, mae, mean_sd, mse, nlpd, normalized_mae


def test_basic_values():
    assert mae([1, 2, 3], [1, 1, 5]) == pytest.approx(1.0)
    assert mse([1, 2, 3], [1, 1, 5]) == pytest.approx(5 / 3)


@settings(max_examples=30, deadline=None)
@given(y=st.floats(-5, 5), m=st.floats(-5, 5), v=st.floats(1e-3, 10))
def test_nlpd_is_negative_log_normal_density(y, m, v):
    assert nlpd([y], [m], [v]) == pytest.approx(-norm(m, math.sqrt(v)).logpdf(y), rel=1e-10, abs=1e-12)


def test_nlpd_rejects_nonpositive_variance():
    with pytest.raises(InputError):
        nlpd([0.0], [0.0], [0.0])
    with pytest.raises(InputError):
        nlpd([0.0, 1.0], [0.0, 1.0], [1.0])


def test_length_and_empty_checks():
    with pytest.raises(InputError):
        mae([1, 2], [1])
    with pytest.raises(InputError):
        mse([], [])


def test_evaluate_without_variances():
    r = evaluate([0.0, 2.0], [1.0, 1.0])
    assert (r.mae, r.mse, r.n) == (1.0, 1.0, 2) and math.isnan(r.nlpd)


def test_normalized_mae():
    truth = np.array([0.0, 2.0, 4.0])
    pred = truth + 1
    assert normalized_mae(truth, pred) == 1.0
    assert normalized_mae(truth, pred, "range") == 0.25
    assert normalized_mae(truth, pred, "std") == pytest.approx(1 / np.std(truth))
    with pytest.raises(InputError):
        normalized_mae(truth, pred, "iqr")


def test_mean_sd_skips_nonfinite():
    assert mean_sd([1.0, 3.0, np.nan]) == (2.0, pytest.approx(math.sqrt(2)))
    assert mean_sd([5.0]) == (5.0, 0.0)
    assert all(math.isnan(v) for v in mean_sd([]))


def test_nlpd_reference_points():
    assert nlpd([1.0], [1.0], [1 / (2 * math.pi)]) == pytest.approx(0.0, abs=1e-15)
    assert nlpd([1.0], [1.0], [1.0]) == pytest.approx(0.5 * math.log(2 * math.pi))
    assert mse([0.0, 0.0], [1.0, -1.0]) == 1.0
    assert mse([3.0, 4.0], [3.0, 4.0]) == 0.0


@settings(max_examples=30, deadline=None)
@given(y=st.floats(-5, 5), m=st.floats(-5, 5))
def test_nlpd_minimized_at_squared_residual(y, m):
    r2 = (y - m) ** 2
    if r2 < 1e-6:
        return
    grid = r2 * np.exp(np.linspace(-3, 3, 601))
    best = grid[np.argmin([nlpd([y], [m], [v]) for v in grid])]
    assert best == pytest.approx(r2, rel=0.02)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), shift=st.floats(-100, 100))
def test_mse_shift_invariance_and_jensen(seed, shift):
    rng = np.random.default_rng(seed)
    t, p = rng.normal(size=7), rng.normal(size=7)
    assert mse(t + shift, p + shift) == pytest.approx(mse(t, p), rel=1e-9, abs=1e-9)
    r = evaluate(t, p, np.ones(7))
    assert r.mae**2 <= r.mse * (1 + 1e-12)
    assert r.nlpd == pytest.approx(np.mean([-norm(pi, 1).logpdf(ti) for ti, pi in zip(t, p)]))
