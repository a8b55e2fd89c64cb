from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate as sci

from perpint.quadrature import QuadratureError, assess_ladder, integrate, integrate_intervals


@pytest.mark.parametrize(
    "fn, lo, hi",
    [
        (np.sin, 0.0, math.pi),
        (lambda x: np.exp(-x * x), -3.0, 2.0),
        (lambda x: 1.0 / (1.0 + x * x), 0.0, 50.0),
        (lambda x: np.sqrt(x), 0.0, 1.0),
        (lambda x: np.abs(x - 0.3), 0.0, 1.0),
    ],
)
def test_matches_scipy_quad(fn, lo, hi):
    ref, _ = sci.quad(lambda v: float(fn(np.array(v))), lo, hi, epsabs=1e-13, epsrel=1e-13, limit=200)
    assert integrate(fn, lo, hi) == pytest.approx(ref, rel=1e-9, abs=1e-12)


def test_log_mode_handles_huge_integrands():
    # int_0^1 exp(800 y) dy = (exp(800) - 1) / 800 overflows in linear space
    got = integrate(lambda y: 800.0 * y, 0.0, 1.0, log=True)
    assert got == pytest.approx(800.0 - math.log(800.0), rel=1e-12)


def test_many_intervals_at_once():
    lo = np.linspace(0.0, 1.0, 9)[:-1]
    hi = lo + 0.125
    res = integrate_intervals(np.cos, lo, hi)
    assert np.allclose(res.value, np.sin(hi) - np.sin(lo), atol=1e-13)
    assert not res.failed.any()


def test_non_finite_integrand_fails_loudly():
    with pytest.raises(QuadratureError) as info:
        integrate(lambda y: np.where(y > 0.5, np.nan, 1.0), 0.0, 1.0)
    assert info.value.lo <= 0.5 <= info.value.hi or info.value.lo > 0.5


@settings(max_examples=60, deadline=None)
@given(st.floats(0.05, 1.5), st.floats(-3.0, 3.0))
def test_geometric_increments_are_finite_with_exact_tail(decay, log_first):
    k = np.arange(33)
    logd = log_first - decay * k
    a = assess_ladder(logd)
    exact = math.exp(log_first) / (1.0 - math.exp(-decay))
    assert a.outcome == "finite"
    assert a.value == pytest.approx(exact, rel=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.floats(-2.0, 2.0), st.floats(0.0, 0.3))
def test_non_decaying_increments_diverge(log_first, growth):
    logd = log_first + growth * np.arange(33)
    a = assess_ladder(logd)
    assert a.outcome == "infinite"
    assert a.value == math.inf


def test_logarithmically_decaying_increments_are_inconclusive():
    # increments ~ 1/k: the sum diverges, but only logarithmically
    k = np.arange(1, 34, dtype=float)
    a = assess_ladder(-np.log(k))
    assert a.outcome == "inconclusive"


def test_partial_sums_are_cumulative():
    a = assess_ladder(np.log([1.0, 0.5, 0.25]), base=2.0)
    assert a.partial_sums == pytest.approx((3.0, 3.5, 3.75))
