import math
from fractions import Fraction

import pytest
from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st
from strategies import COORDS, exprs, points, rational_points, smooth_exprs

from oddgeom import expr as E
from oddgeom.expr import EvalTag
from oddgeom.simplify import fold, simplify

X, Y = E.Var(0), E.Var(1)
PROPS = settings(max_examples=300, deadline=None, suppress_health_check=list(HealthCheck))


def p(text, coords=COORDS):
    return E.parse(text, coords)


# ---------------------------------------------------------------------------
# parse


def test_parse_power():
    assert p("x^2", ["x"]) == E.IntPow(X, 2)


def test_parse_sqrt_sum():
    assert p("sqrt(x^2+y^2)") == E.Sqrt(E.Add(E.IntPow(X, 2), E.IntPow(Y, 2)))


def test_parse_incomplete_input_reports_offset():
    with pytest.raises(E.ExpressionSyntaxError) as info:
        p("x+")
    assert info.value.offset == 2


def test_parse_unknown_identifier():
    with pytest.raises(E.UnknownIdentifier) as info:
        p("x + w")
    assert info.value.name == "w" and info.value.offset == 4


def test_precedence():
    assert p("-x^2") == E.Neg(E.IntPow(X, 2))
    assert p("x - y - 1") == E.Sub(E.Sub(X, Y), E.Const(1))
    assert p("x*y/2") == E.Div(E.Mul(X, Y), E.Const(2))
    assert p("x + y*x") == E.Add(X, E.Mul(Y, X))
    assert p(" ( x+y ) ^ 3 ") == p("(x+y)^3")


def test_negative_exponent_and_decimals():
    assert p("x^-2") == E.IntPow(X, -2)
    assert E.evaluate_float(p("0.25*x"), [2.0, 0.0]) == 0.5


def test_division_by_literal_zero_rejected():
    with pytest.raises(E.ExpressionError):
        E.Div(X, E.ZERO)


def test_var_index_beyond_dimension_rejected():
    from oddgeom.compiled import Program

    with pytest.raises(E.ExpressionError):
        Program.build([E.Var(2)], dim=2)


# ---------------------------------------------------------------------------
# evaluate


def test_evaluate_abs():
    r = E.evaluate(p("abs(x)", ["x"]), [-2])
    assert r.tag is EvalTag.FINITE and r.value == 2


def test_evaluate_pole():
    r = E.evaluate(p("1/x", ["x"]), [0.0])
    assert r.tag is EvalTag.POLE and r.node is not None


def test_evaluate_zero_over_zero_is_indeterminate():
    r = E.evaluate(p("x^2/x", ["x"]), [0.0])
    assert r.tag is EvalTag.INDETERMINATE


def test_sqrt_branches():
    e = p("sqrt(x)", ["x"])
    assert E.evaluate(e, [-1.0]).tag is EvalTag.INDETERMINATE
    assert E.evaluate(e, [-1e-13]).value == 0.0
    assert E.evaluate(e, [4]).value == 2


def test_guard_must_be_positive():
    with pytest.raises(ValueError):
        E.evaluate(X, [1.0], guard=0.0)


# ---------------------------------------------------------------------------
# differentiate / simplify


def _same(a, b, pts):
    for pt in pts:
        va, vb = E.evaluate_float(a, pt), E.evaluate_float(b, pt)
        assert math.isclose(va, vb, rel_tol=1e-12, abs_tol=1e-12)


def test_derivative_examples():
    pts = [[0.7, -1.3], [-2.0, 0.4]]
    assert simplify(E.differentiate(p("x^2"), 0)) in (p("2*x"), p("x*2"))
    _same(E.differentiate(p("abs(x)"), 0), p("x/abs(x)"), pts)
    _same(E.differentiate(p("sqrt(x^2+y^2)"), 0), p("x/sqrt(x^2+y^2)"), pts)


def test_simplify_examples():
    assert simplify(p("sqrt(x^2)")) == p("abs(x)")
    assert simplify(p("(x*y)/(x*y)")) == E.ONE
    assert simplify(p("x + 0")) == X
    assert fold(p("abs(abs(x))")) == p("abs(x)")


def test_node_budget():
    e = X
    for _ in range(20):
        e = E.Add(E.Mul(e, e), E.Const(1))
    with pytest.raises(E.ExpressionTooLarge):
        simplify(e, budget=50)


@PROPS
@given(exprs())
def test_round_trip_through_printer(e):
    printed = E.to_string(e, COORDS)
    assert fold(E.parse(printed, COORDS)) == fold(e)


@settings(max_examples=150, deadline=None, suppress_health_check=list(HealthCheck))
@given(exprs(max_leaves=8))
def test_round_trip_through_simplifier(e):
    assert simplify(E.parse(E.to_string(e, COORDS), COORDS)) == simplify(e)


def _finite_near(e, pt, h):
    for dx in (-h, 0.0, h):
        for i in range(len(pt)):
            q = list(pt)
            q[i] += dx
            r = E.evaluate(e, q)
            if not r.is_finite or not math.isfinite(float(r.value)):
                return False
    return True


@PROPS
@given(smooth_exprs(), points(), st.integers(0, 1))
def test_derivative_matches_central_difference(e, pt, i):
    h = 1e-6
    assume(_finite_near(e, pt, 1e-3))
    # keep away from kinks of abs/sqrt where the one-sided slopes differ
    assume(all(abs(float(E.evaluate(n.arg, pt).value)) > 1e-3
               for n in E.iter_nodes(e) if isinstance(n, (E.Abs, E.Sqrt))))
    assume(abs(E.evaluate_float(e, pt)) < 1e4)
    d = E.evaluate(E.differentiate(e, i), pt)
    assume(d.is_finite)
    lo, hi = list(pt), list(pt)
    lo[i] -= h
    hi[i] += h
    fd = (E.evaluate_float(e, hi) - E.evaluate_float(e, lo)) / (2 * h)
    value = float(d.value)
    assume(abs(value) < 1e4)
    assert abs(value - fd) <= 1e-5 * (1 + abs(value))


@PROPS
@given(exprs(max_leaves=10), rational_points())
def test_simplify_preserves_rational_values_exactly(e, pt):
    before = E.evaluate(e, pt)
    after = E.evaluate(simplify(e), pt)
    assume(before.is_finite and after.is_finite)
    a, b = before.value, after.value
    if isinstance(a, Fraction) and isinstance(b, Fraction):
        assert a == b
    else:  # a square root of a non-square rational left the exact field
        assert math.isclose(float(a), float(b), rel_tol=1e-12, abs_tol=1e-300)


@PROPS
@given(exprs(max_leaves=10, floats=True), points())
def test_simplify_preserves_float_values(e, pt):
    before = E.evaluate(e, pt)
    after = E.evaluate(simplify(e), pt)
    assume(before.is_finite and after.is_finite)
    a, b = float(before.value), float(after.value)
    assume(abs(a) < 1e12)
    assert math.isclose(a, b, rel_tol=1e-12, abs_tol=1e-12)
