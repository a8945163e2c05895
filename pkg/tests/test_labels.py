import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lobpredict.labels import (
    DEEPLOB,
    DOWN,
    FI2010,
    FLAT,
    PAPER,
    UP,
    ClassThreshold,
    ReturnSpec,
    alpha_hat,
    classify,
    classify_returns,
    compute_return,
    multi_horizon_returns,
    return_series,
)


def _sorted_quantile(x, p):
    """Order-statistic interpolation at positions (i-1)/(n-1), written out by hand."""
    s = sorted(x)
    pos = p * (len(s) - 1)
    i = math.floor(pos)
    if i + 1 >= len(s):
        return s[-1]
    return s[i] + (pos - i) * (s[i + 1] - s[i])


@pytest.mark.parametrize("variant", [PAPER, FI2010, DEEPLOB])
def test_constant_mid_zero_return(variant):
    mid = np.full(50, 100.0)
    spec = ReturnSpec(variant, 10, 5)
    assert compute_return(mid, spec, 20) == 0.0
    r = return_series(mid, spec)
    assert np.all(r[~np.isnan(r)] == 0)


def test_ramp_paper_variant():
    mid = 100.0 + 0.01 * np.arange(40)
    r = compute_return(mid, ReturnSpec(PAPER, 10, 5), 0)
    assert r == pytest.approx(0.001, abs=1e-12)


def test_k0_is_plain_return(rng):
    mid = 100 + rng.normal(size=60).cumsum() * 0.01
    spec = ReturnSpec(PAPER, 7, 0)
    for t in range(0, 50):
        assert compute_return(mid, spec, t) == pytest.approx((mid[t + 7] - mid[t]) / mid[t], abs=1e-15)


def test_fi2010_and_deeplob_formulas(rng):
    mid = 100 + rng.normal(size=80).cumsum() * 0.01
    h, t = 6, 30
    fut = mid[t + 1 : t + h + 1].mean()
    past = mid[t - h + 1 : t + 1].mean()
    assert compute_return(mid, ReturnSpec(FI2010, h), t) == pytest.approx((fut - mid[t]) / mid[t], abs=1e-15)
    assert compute_return(mid, ReturnSpec(DEEPLOB, h), t) == pytest.approx((fut - past) / past, abs=1e-15)


@pytest.mark.parametrize("variant,h,k", [(PAPER, 10, 5), (PAPER, 3, 5), (FI2010, 4, 0), (DEEPLOB, 5, 0)])
def test_series_matches_pointwise(variant, h, k, rng):
    mid = 100 + rng.normal(size=70).cumsum() * 0.01
    spec = ReturnSpec(variant, h, k)
    series = return_series(mid, spec)
    for t in range(70):
        r = compute_return(mid, spec, t)
        if r is None:
            assert np.isnan(series[t])
        else:
            assert series[t] == pytest.approx(r, abs=1e-13)


def test_stencil_end_gives_none():
    mid = np.arange(20, dtype=float) + 100
    assert compute_return(mid, ReturnSpec(PAPER, 10, 5), 4) == pytest.approx((mid[14] - mid[4]) / mid[4])
    assert compute_return(mid, ReturnSpec(PAPER, 10, 5), 5) is None


def test_spec_validation():
    with pytest.raises(ValueError):
        ReturnSpec(PAPER, 0)
    with pytest.raises(ValueError):
        ReturnSpec("other")


def test_alpha_symmetric():
    q = 2e-4
    r = np.concatenate([-np.linspace(q / 2, 3 * q, 50), np.linspace(q / 2, 3 * q, 50)])
    a = alpha_hat(r)
    assert a.alpha == pytest.approx((abs(_sorted_quantile(r, 0.33)) + _sorted_quantile(r, 0.66)) / 2)


def test_alpha_worked_example():
    r = np.array([-5, -3, -1, 1, 3, 5]) * 1e-4
    assert _sorted_quantile(r, 0.33) == pytest.approx(-1.7e-4)
    assert _sorted_quantile(r, 0.66) == pytest.approx(1.6e-4)
    a = alpha_hat(r, horizon=10, window=3, ticker="X")
    assert a.alpha == pytest.approx(1.65e-4, rel=1e-12)
    assert (a.horizon, a.window, a.ticker, a.fallback) == (10, 3, "X", False)


@given(st.lists(st.floats(-1e-2, 1e-2, allow_nan=False), min_size=2, max_size=60))
@settings(max_examples=100, deadline=None)
def test_alpha_matches_sort_oracle(values):
    r = np.array(values)
    expected = (abs(_sorted_quantile(values, 0.33)) + _sorted_quantile(values, 0.66)) / 2
    a = alpha_hat(r)
    if expected > 0:
        assert a.alpha == pytest.approx(expected, rel=1e-9, abs=1e-300)
        assert not a.fallback
    else:
        assert a.fallback and a.alpha > 0


def test_alpha_all_zero_falls_back():
    a = alpha_hat(np.zeros(10))
    assert a.fallback and a.alpha > 0


def test_alpha_fallback_half_min_nonzero():
    r = np.array([0.0] * 20 + [4e-4, -6e-4])
    a = alpha_hat(r)
    assert a.fallback and a.alpha == pytest.approx(2e-4)


def test_threshold_positive():
    with pytest.raises(ValueError):
        ClassThreshold(0.0)


def test_classify_boundaries():
    a = 1e-4
    assert classify(0.0, a) == FLAT
    assert classify(a, a) == FLAT and classify(-a, a) == FLAT
    assert classify(a + 1e-12, a) == UP
    assert classify(-a - 1e-12, a) == DOWN
    with pytest.raises(ValueError):
        classify(0.0, 0.0)


@given(st.lists(st.floats(-1, 1), min_size=2, max_size=40), st.floats(1e-6, 0.5))
def test_classify_monotone(values, a):
    r = np.sort(values)
    c = classify(r, a)
    assert np.all(np.diff(c) >= 0)


def test_label_balance_iid_normal():
    r = np.random.default_rng(0).standard_normal(100_000)
    c = classify(r, alpha_hat(r).alpha)
    shares = np.bincount(c, minlength=3) / len(c)
    assert np.all(np.abs(shares - 1 / 3) <= 0.02)


def test_multi_horizon_agrees_with_single(rng):
    mid = 100 + rng.normal(size=300).cumsum() * 0.01
    hs = (10, 20, 30, 50, 100)
    R = multi_horizon_returns(mid, hs)
    alphas = [alpha_hat(R[:, j]).alpha for j in range(len(hs))]
    ok = ~np.isnan(R).any(axis=1)
    labels = classify_returns(R[ok], alphas, np.flatnonzero(ok), hs)
    for j, h in enumerate(hs):
        single = classify(return_series(mid, ReturnSpec(PAPER, h, 5))[ok], alphas[j])
        assert np.array_equal(labels.classes[:, j], single)
    assert labels.counts(0).sum() == ok.sum()


def test_multi_horizon_requires_increasing():
    with pytest.raises(ValueError):
        multi_horizon_returns(np.ones(50), (20, 10))
