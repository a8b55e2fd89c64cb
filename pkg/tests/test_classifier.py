from __future__ import annotations

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perpint.classifier import (
    CriterionInapplicable,
    MomentBound,
    NovikovConditionError,
    Outcome,
    classify_fixation_before_extinction,
    classify_perpetual_two_sided,
    classify_perpetual_zero,
    girsanov_reduce,
    moment_bound,
)
from perpint.coefficients import parse_expr
from perpint.scale_speed import DiffusionSpec

F, I, U = Outcome.FINITE, Outcome.INFINITE, Outcome.INCONCLUSIVE


def _feller(ratio):
    return DiffusionSpec.from_strings("sqrt(y)", repr(ratio))


def _wf(drift="0"):
    return DiffusionSpec.from_strings("sqrt(y*(1-y))", drift, (0.0, 1.0))


@pytest.mark.parametrize("method", ["auto", "numeric"])
@pytest.mark.parametrize("ratio", [0.1, 0.25, 0.4])
@pytest.mark.parametrize("alpha", [0.5, 0.9, 1.0, 1.1, 2.0])
def test_power_integrands_near_zero(method, ratio, alpha):
    v = classify_perpetual_zero(_feller(ratio), parse_expr(f"y^(-{alpha})"), method=method)
    assert v.outcome is (I if alpha >= 1 else F)


def test_numeric_route_reports_its_method():
    v = classify_perpetual_zero(_feller(0.25), parse_expr("y^(-0.5)"), method="numeric")
    assert v.method == "numeric-extrapolation"
    assert v.ladder is not None and v.ladder.outcome == "finite"


@pytest.mark.parametrize("f, outcome", [("1/y", I), ("1/sqrt(y)", F)])
def test_logistic_diffusion(f, outcome):
    spec = DiffusionSpec.from_strings("sqrt(y)", "y*(1-0.1*y)")
    assert classify_perpetual_zero(spec, parse_expr(f)).outcome is outcome


def test_brownian_motion_constant_integrand():
    assert classify_perpetual_zero(DiffusionSpec.from_strings("1", "0"), parse_expr("1")).outcome is F


@pytest.mark.parametrize("ratio", [0.5, 0.75])
def test_criterion_requires_absorption(ratio):
    with pytest.raises(CriterionInapplicable):
        classify_perpetual_zero(_feller(ratio), parse_expr("1/y"))


@pytest.mark.parametrize("f", ["1/(y^2*(1+log(y)^2))", "1/(y^2*(1+abs(log(y))))"])
def test_logarithmic_border_integrands_are_inconclusive(f):
    # 2y f(y) ~ 1/(y log^2) converges and 1/(y log) diverges, both slower than any power
    v = classify_perpetual_zero(DiffusionSpec.from_strings("1", "0"), parse_expr(f))
    assert v.outcome is U


@pytest.mark.parametrize(
    "drift, f, boundary, outcome",
    [("0", "1/(1-y)", 1.0, I), ("0.5*y*(1-y)", "1/(1-y)", 1.0, I), ("0", "1", 0.0, F),
     ("0", "1/y", "left", I), ("-0.5*y*(1-y)", "1/sqrt(1-y)", "right", F)],
)
def test_two_sided(drift, f, boundary, outcome):
    assert classify_perpetual_two_sided(_wf(drift), parse_expr(f), boundary).outcome is outcome


def test_two_sided_rejects_unknown_boundary():
    with pytest.raises(ValueError):
        classify_perpetual_two_sided(_wf(), parse_expr("1"), 0.5)


@pytest.mark.parametrize("eps, outcome", [(0.0, I), (0.1, F), (0.25, F), (0.4, F)])
def test_fixation_before_extinction(eps, outcome):
    sigma = parse_expr(f"y^({(1 - eps) / 2!r})")
    assert classify_fixation_before_extinction(sigma, parse_expr("y")).outcome is outcome


def test_fixation_with_logistic_drift_reduces_to_sigma_squared_integral():
    drift = parse_expr("y*(1-0.1*y)")
    for sigma, outcome in [("sqrt(y)", I), ("y^0.3", F)]:
        v = classify_fixation_before_extinction(parse_expr(sigma), parse_expr("y"), drift=drift)
        assert v.outcome is outcome


def test_moment_bound_for_brownian_bump():
    spec = DiffusionSpec.from_strings("1", "0")
    f = parse_expr("min(1, max(0, 2-2*y))")
    b1 = moment_bound(spec, f, 1)
    # int 2 y f(y) dy = 7/12
    assert b1.integral == pytest.approx(7 / 12, rel=1e-9)
    assert moment_bound(spec, f, 2).bound == pytest.approx(2 * (7 / 12) ** 2, rel=1e-9)
    assert moment_bound(spec, f, 3).bound / moment_bound(spec, f, 2).bound == pytest.approx(3 * 7 / 12)


def test_moment_bound_diverges():
    assert moment_bound(DiffusionSpec.from_strings("1", "0"), parse_expr("1"), 1).bound == math.inf
    assert moment_bound(_feller(0.25), parse_expr("1/y"), 2).bound == math.inf


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 12), st.floats(0.01, 5.0))
def test_moment_recurrence(n, integral):
    b = MomentBound(n, math.factorial(n) * integral ** n, integral)
    nxt = b.next_order()
    assert nxt.bound == pytest.approx(b.bound * (n + 1) * integral, rel=1e-12)


def test_adding_a_divergent_term_flips_finite_to_infinite():
    spec = _feller(0.25)
    for f in ["y^(-0.5)", "1", "exp(-y)"]:
        assert classify_perpetual_zero(spec, parse_expr(f)).outcome is F
        assert classify_perpetual_zero(spec, parse_expr(f"{f} + y^(-1.5)")).outcome is I


def test_girsanov_zero_perturbation_matches_homogeneous():
    spec = _feller(0.25)
    for f in ["1/y", "y^(-0.5)"]:
        base = classify_perpetual_zero(spec, parse_expr(f))
        red = girsanov_reduce(spec, parse_expr(f), parse_expr("0"), absorbed=True, no_explosion=True)
        assert red.outcome is base.outcome


def test_girsanov_lotka_volterra_reduction():
    spec = DiffusionSpec.from_strings("sqrt(y)", "y*(1-0.1*y)")
    v = girsanov_reduce(spec, parse_expr("1/y"), parse_expr("0.5*y"), absorbed=True, no_explosion=True)
    assert v.outcome is I


def test_girsanov_unbounded_ratio_raises():
    spec = DiffusionSpec.from_strings("y", "0")
    with pytest.raises(NovikovConditionError):
        girsanov_reduce(spec, parse_expr("1"), parse_expr("1"), absorbed=True, no_explosion=True)


def test_girsanov_needs_caller_assertions():
    with pytest.raises(ValueError):
        girsanov_reduce(_feller(0.25), parse_expr("1"), parse_expr("0"), absorbed=False, no_explosion=True)


def test_verdict_summary_mentions_outcome():
    v = classify_perpetual_zero(_feller(0.25), parse_expr("1/y"))
    assert "InfiniteAS" in v.summary()
