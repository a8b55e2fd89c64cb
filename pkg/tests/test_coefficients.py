from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perpint.coefficients import (
    DomainError,
    ParseError,
    eval_expr,
    eval_near,
    exponent_at,
    parse_expr,
)
from perpint.kernels import compile_model

_LEAVES = st.one_of(
    st.just("y"),
    st.floats(0.1, 9.0, allow_nan=False).map(lambda v: f"{v:.3g}"),
)


def _combine(children):
    return st.one_of(
        st.tuples(children, st.sampled_from("+-*/"), children).map(lambda t: f"({t[0]} {t[1]} {t[2]})"),
        children.map(lambda c: f"exp(-({c})^2)"),
        children.map(lambda c: f"sqrt(abs({c}))"),
        st.tuples(children, children).map(lambda t: f"max({t[0]}, {t[1]})"),
        st.tuples(children, st.sampled_from(["2", "0.5", "(-1/2)", "(1.5)"])).map(
            lambda t: f"abs({t[0]})^{t[1]}"),
    )


EXPRESSIONS = st.recursive(_LEAVES, _combine, max_leaves=8)


@settings(max_examples=200, deadline=None)
@given(EXPRESSIONS, st.floats(0.05, 5.0))
def test_pretty_round_trip_preserves_value(text, y):
    e = parse_expr(text)
    again = parse_expr(e.pretty())
    assert again.pretty() == e.pretty()
    v1 = eval_expr(e, y, strict=False)
    v2 = eval_expr(again, y, strict=False)
    assert (math.isnan(v1) and math.isnan(v2)) or v1 == pytest.approx(v2, rel=1e-12, abs=1e-300)


def test_operator_precedence_and_unary_minus():
    e = parse_expr("-y^2 + 2*3 - 4/2/2")
    assert eval_expr(e, 3.0) == pytest.approx(-9 + 6 - 1)
    assert eval_expr(parse_expr("2^(-1/2)"), 0.3) == pytest.approx(2 ** -0.5)
    assert eval_expr(parse_expr("min(y, 1) + max(0, 2-2*y)"), 0.75) == pytest.approx(1.25)


@pytest.mark.parametrize(
    "text, offset",
    [("y^^2", 3), ("sqrt(y", 7), ("y +", 4), ("foo(y)", 1), ("y^y", 3), ("2 y", 3)],
)
def test_parse_errors_report_offset(text, offset):
    with pytest.raises(ParseError) as info:
        parse_expr(text)
    assert info.value.offset == offset
    assert info.value.expected


@pytest.mark.parametrize("text, y", [("log(y)", -1.0), ("sqrt(y)", -0.5), ("1/y", 0.0), ("y^(-1)", 0.0)])
def test_domain_errors(text, y):
    with pytest.raises(DomainError):
        eval_expr(parse_expr(text), y)
    assert math.isnan(eval_expr(parse_expr(text), y, strict=False))


def test_array_evaluation_matches_scalar():
    e = parse_expr("sqrt(y*(1-y)) + exp(-y)/(1+y^2)")
    ys = np.linspace(0.01, 0.99, 37)
    arr = eval_expr(e, ys)
    assert np.allclose(arr, [eval_expr(e, v) for v in ys], rtol=1e-14)


def test_eval_near_uses_exact_boundary_distance():
    e = parse_expr("1/(1-y)")
    d = np.array([1e-20, 1e-10])
    out = eval_near(e, 1.0 - d, right=(1.0, d))
    assert np.allclose(out, 1.0 / d, rtol=1e-14)


@pytest.mark.parametrize(
    "text, boundary, side, exponent, coeff",
    [
        ("y^(-0.5)", 0.0, 1, -0.5, 1.0),
        ("3*y^2 + y^3", 0.0, 1, 2.0, 3.0),
        ("y*(1-y)", 1.0, -1, 1.0, 1.0),
        ("1/(1-y)", 1.0, -1, -1.0, 1.0),
        ("sqrt(y)", 0.0, 1, 0.5, 1.0),
        ("2*y^(-1/2) + exp(-y)", math.inf, None, -0.5, 2.0),
        ("y + y^2", math.inf, None, 2.0, 1.0),
        ("exp(y) - 1", 0.0, 1, 1.0, 1.0),
        ("y^0.3*(1 + y)", 0.0, 1, 0.3, 1.0),
    ],
)
def test_exponent_extraction(text, boundary, side, exponent, coeff):
    r = exponent_at(parse_expr(text), boundary, side)
    assert r is not None
    assert r.exponent == pytest.approx(exponent, abs=1e-9)
    assert r.leading_coeff == pytest.approx(coeff, rel=1e-9)


@pytest.mark.parametrize("text", ["y*log(y)", "1/log(1/y)"])
def test_logarithmic_factors_are_not_power_laws(text):
    assert exponent_at(parse_expr(text), 0.0, 1) is None


def test_zero_function_has_infinite_exponent():
    r = exponent_at(parse_expr("0*y"), 0.0, 1)
    assert r is not None and r.exponent == math.inf


def test_full_cancellation_is_left_undecided():
    # only an O(d^k) remainder survives, so no leading term can be certified
    assert exponent_at(parse_expr("2*y - y - y"), 0.0, 1) is None


def test_compiled_model_agrees_with_interpreter():
    exprs = [parse_expr("sqrt(y*(1-y))"), parse_expr("0.5*y*(1-y)"), parse_expr("1/(1-y)")]
    model = compile_model(exprs, (0.0, 1.0))
    out = np.zeros(3)
    for y in (1e-9, 0.2, 0.5, 0.999999):
        model(y, y, 1.0 - y, out)
        assert np.allclose(out, [eval_expr(e, y) for e in exprs], rtol=1e-12)
