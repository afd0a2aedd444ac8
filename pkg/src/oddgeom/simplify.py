"""Normal forms for :class:`~oddgeom.expr.Expr`.

``fold`` is a cheap local rewriter (constant folding, 0/1 identities,
``sqrt(f^2) -> |f|``, ``||f|| -> |f|``, cancellation of syntactically equal
factors).  ``simplify`` additionally cancels rational functions through
sympy, treating coordinates as real symbols, and pulls even powers out of
square roots as absolute values.  Both preserve values wherever input and
output are finite.
"""
from __future__ import annotations

import math

from fractions import Fraction
from functools import lru_cache

import sympy as sp

from . import expr as E

_SYMBOLS: dict[int, sp.Symbol] = {}


def _sym(i: int) -> sp.Symbol:
    s = _SYMBOLS.get(i)
    if s is None:
        s = _SYMBOLS[i] = sp.Symbol(f"x{i}", real=True)
    return s


# ---------------------------------------------------------------------------
# local rewriting


def _num(e):
    return e.value if isinstance(e, E.Const) else None


def _const(v) -> E.Expr:
    if isinstance(v, float) and not math.isfinite(v):
        raise OverflowError("constant folding left the float range")
    if v < 0:
        return E.Neg(E.Const(-v))
    return E.Const(v)


def _const_value(e):
    """Value of a constant subtree (Const or Neg(Const)), else None."""
    if isinstance(e, E.Const):
        return e.value
    if isinstance(e, E.Neg) and isinstance(e.arg, E.Const):
        return -e.arg.value
    return None


def _factors(e: E.Expr) -> list[E.Expr]:
    if isinstance(e, E.Mul):
        return _factors(e.left) + _factors(e.right)
    return [e]


def _product(fs: list[E.Expr]) -> E.Expr:
    if not fs:
        return E.ONE
    out = fs[0]
    for f in fs[1:]:
        out = E.Mul(out, f)
    return out


ZERO_DENOMINATOR = E.Mul(E.ZERO, E.ZERO)


def _fold_node(node: E.Expr, kids: list[E.Expr]) -> E.Expr:
    cv = [_const_value(k) for k in kids]
    if isinstance(node, E.Add):
        a, b = kids
        if cv[0] is not None and cv[1] is not None:
            return _const(cv[0] + cv[1])
        if cv[0] == 0:
            return b
        if cv[1] == 0:
            return a
        if isinstance(b, E.Neg):
            return E.Sub(a, b.arg)
        return E.Add(a, b)
    if isinstance(node, E.Sub):
        a, b = kids
        if cv[0] is not None and cv[1] is not None:
            return _const(cv[0] - cv[1])
        if cv[1] == 0:
            return a
        if cv[0] == 0:
            return _fold_node(E.Neg(b), [b])
        if a == b:
            return E.ZERO
        if isinstance(b, E.Neg):
            return E.Add(a, b.arg)
        return E.Sub(a, b)
    if isinstance(node, E.Neg):
        (a,) = kids
        if cv[0] is not None:
            return _const(-cv[0])
        if isinstance(a, E.Neg):
            return a.arg
        return E.Neg(a)
    if isinstance(node, E.Mul):
        a, b = kids
        if cv[0] is not None and cv[1] is not None:
            return _const(cv[0] * cv[1])
        if cv[0] == 0 or cv[1] == 0:
            return E.ZERO
        if cv[0] == 1:
            return b
        if cv[1] == 1:
            return a
        if cv[0] == -1:
            return _fold_node(E.Neg(b), [b])
        if cv[1] == -1:
            return _fold_node(E.Neg(a), [a])
        return E.Mul(a, b)
    if isinstance(node, E.Div):
        a, b = kids
        if cv[0] is not None and cv[1] is not None and cv[1] != 0:
            if isinstance(cv[0], float) or isinstance(cv[1], float):
                return _const(cv[0] / cv[1])
            return _const(Fraction(cv[0]) / Fraction(cv[1]))
        if cv[1] == 0:
            # a literal zero denominator is not representable; every vanishing
            # denominator becomes the same non-literal zero so the pole survives
            return E.Div(a, ZERO_DENOMINATOR)
        if cv[0] == 0:
            return E.ZERO
        if cv[1] == 1:
            return a
        # cancel syntactically equal factors
        num, den = _factors(a), _factors(b)
        rest = []
        for f in den:
            if f in num:
                num.remove(f)
            else:
                rest.append(f)
        if not rest:
            return _product(num)
        if len(rest) != len(den):
            return E.Div(_product(num), _product(rest))
        return E.Div(a, b)
    if isinstance(node, E.IntPow):
        (a,) = kids
        n = node.exponent
        if n == 0:
            return E.ONE
        if n == 1:
            return a
        if cv[0] is not None and (n > 0 or cv[0] != 0):
            v = cv[0]
            if isinstance(v, float):
                return _const(v ** n)
            return _const(Fraction(v) ** n)
        if isinstance(a, E.IntPow):
            return E.IntPow(a.base, a.exponent * n)
        return E.IntPow(a, n)
    if isinstance(node, E.Sqrt):
        (a,) = kids
        if isinstance(a, E.IntPow) and a.exponent == 2:
            return E.Abs(a.base)
        if isinstance(a, E.Mul) and a.left == a.right:
            return E.Abs(a.left)
        if cv[0] is not None and cv[0] >= 0:
            r = E._exact_sqrt(cv[0])
            if not isinstance(r, float) or isinstance(cv[0], float):
                return E.Const(r)
        return E.Sqrt(a)
    if isinstance(node, E.Abs):
        (a,) = kids
        if cv[0] is not None:
            return E.Const(abs(cv[0]))
        if isinstance(a, (E.Abs, E.Sqrt)):
            return a
        if isinstance(a, E.Neg):
            return _fold_node(E.Abs(a.arg), [a.arg])
        if isinstance(a, E.IntPow) and a.exponent % 2 == 0:
            return a
        return E.Abs(a)
    return node


def fold(e: E.Expr) -> E.Expr:
    """Apply the local rewrite rules bottom-up until nothing changes."""
    while True:
        memo: dict[int, E.Expr] = {}
        for node in E.iter_nodes(e):
            kids = [memo[id(c)] for c in node.children]
            if node.children:
                try:
                    memo[id(node)] = _fold_node(node, kids)
                except (OverflowError, ZeroDivisionError):
                    memo[id(node)] = E._rebuild(node, kids)  # evaluation reports the pole
            elif isinstance(node, E.Const) and node.value < 0:
                memo[id(node)] = _const(node.value)  # negative literals print as unary minus
            else:
                memo[id(node)] = node
        out = memo[id(e)]
        if out == e:
            return out
        e = out


# ---------------------------------------------------------------------------
# sympy round trip


class _Unsupported(Exception):
    pass


def _has_float(e: E.Expr) -> bool:
    return any(isinstance(n, E.Const) and isinstance(n.value, float) for n in E.iter_nodes(e))


def _pull_even_powers(arg: sp.Expr) -> sp.Expr:
    """sqrt(f^2 g) -> |f| sqrt(g) on the factored radicand."""
    arg = sp.factor(sp.cancel(arg))
    num, den = sp.fraction(arg)
    outside = sp.Integer(1)
    inside = []
    for part, sign in ((num, 1), (den, -1)):
        for f in sp.Mul.make_args(part):
            base, exp = f.as_base_exp()
            if exp.is_Integer and exp >= 2 and not base.is_Number:
                k, r = divmod(int(exp), 2)
                outside *= sp.Abs(base) ** (sign * k)
                if r:
                    inside.append(base ** sign)
            else:
                inside.append(f ** sign)
    return outside * sp.sqrt(sp.Mul(*inside))


def _split_abs_powers(x: sp.Expr) -> sp.Expr:
    """|f|^p -> f^(2k) |f|^(p-2k) so that cancellation sees the polynomial part."""

    def is_target(y):
        return y.is_Pow and isinstance(y.base, sp.Abs) and y.exp.is_Rational and abs(y.exp) >= 2

    def rewrite(y):
        p = y.exp
        k = int(abs(p) // 2) * (1 if p > 0 else -1)
        f = y.base.args[0]
        return f ** (2 * k) * y.base ** (p - 2 * k)

    return x.replace(is_target, rewrite)


def to_sympy(e: E.Expr, rewrite_radicals: bool = True) -> sp.Expr:
    memo: dict[int, sp.Expr] = {}
    for node in E.iter_nodes(e):
        if isinstance(node, E.Const):
            v = node.value
            r = sp.Float(v, 17) if isinstance(v, float) else sp.Rational(v.numerator, v.denominator) \
                if isinstance(v, Fraction) else sp.Integer(v)
        elif isinstance(node, E.Var):
            r = _sym(node.index)
        else:
            k = [memo[id(c)] for c in node.children]
            if isinstance(node, E.Add):
                r = k[0] + k[1]
            elif isinstance(node, E.Sub):
                r = k[0] - k[1]
            elif isinstance(node, E.Mul):
                r = k[0] * k[1]
            elif isinstance(node, E.Div):
                r = k[0] / k[1]
            elif isinstance(node, E.Neg):
                r = -k[0]
            elif isinstance(node, E.IntPow):
                r = k[0] ** node.exponent
            elif isinstance(node, E.Sqrt):
                r = _pull_even_powers(k[0]) if rewrite_radicals else sp.sqrt(k[0])
            elif isinstance(node, E.Abs):
                a = k[0]
                if rewrite_radicals:
                    # |a b| = |a| |b| lets products with their own Abs collapse
                    r = sp.Mul(*[sp.Abs(f) for f in sp.Mul.make_args(sp.factor(sp.cancel(a)))])
                else:
                    r = sp.Abs(a)
            else:
                raise _Unsupported(type(node).__name__)
        memo[id(node)] = r
    return memo[id(e)]


def _from_number(x: sp.Expr) -> E.Expr:
    if x.is_Integer:
        return _const(int(x))
    if x.is_Rational:
        n, d = int(x.p), int(x.q)
        return E.Div(_const(n), E.Const(d))
    if x.is_Float:
        return _const(float(x))
    raise _Unsupported(str(x))


def _from_pow(base: sp.Expr, exp: sp.Expr) -> E.Expr:
    b = from_sympy(base)
    if exp.is_Integer:
        n = int(exp)
        if n < 0:
            return E.Div(E.ONE, b if n == -1 else E.IntPow(b, -n))
        return b if n == 1 else E.IntPow(b, n)
    if exp.is_Rational:
        p, q = int(exp.p), int(exp.q)
        depth = q.bit_length() - 1
        if q != 1 << depth:
            raise _Unsupported(f"exponent {exp}")
        neg = p < 0
        p = abs(p)
        whole, frac = divmod(p, q)
        inner = b if frac == 1 else E.IntPow(b, frac)
        for _ in range(depth):
            inner = E.Sqrt(inner)
        out = inner if whole == 0 else E.Mul(b if whole == 1 else E.IntPow(b, whole), inner)
        return E.Div(E.ONE, out) if neg else out
    raise _Unsupported(f"exponent {exp}")


def _from_product(x: sp.Expr) -> E.Expr:
    coeff, rest = x.as_coeff_Mul()
    factors = [f for f in sp.Mul.make_args(rest) if f != 1] if rest != 1 else []
    factors.sort(key=sp.default_sort_key)
    body = None
    for f in factors:
        base, exp = f.as_base_exp()
        node = _from_pow(base, exp) if f.is_Pow else from_sympy(f)
        body = node if body is None else E.Mul(body, node)
    if body is None:
        return _from_number(coeff)
    if coeff == 1:
        return body
    if coeff == -1:
        return E.Neg(body)
    neg = coeff < 0
    c = -coeff if neg else coeff
    if c.is_Rational and not c.is_Integer:
        out = body if c.p == 1 else E.Mul(E.Const(int(c.p)), body)
        out = E.Div(out, E.Const(int(c.q)))
    else:
        out = E.Mul(_from_number(c), body)
    return E.Neg(out) if neg else out


def _is_negative_term(t: sp.Expr) -> bool:
    c, _ = t.as_coeff_Mul()
    return bool(c.is_negative)


def from_sympy(x: sp.Expr) -> E.Expr:
    if x.has(sp.zoo, sp.nan, sp.oo, sp.I, -sp.oo):
        raise _Unsupported("non-real or infinite value")
    if x.is_Number:
        return _from_number(x)
    if x.is_Symbol:
        return E.Var(int(x.name[1:]))
    if x.is_Add:
        terms = x.as_ordered_terms()
        out = None
        for t in terms:
            if out is None:
                out = from_sympy(t)
            elif _is_negative_term(t):
                out = E.Sub(out, from_sympy(-t))
            else:
                out = E.Add(out, from_sympy(t))
        return out
    if isinstance(x, sp.Abs):
        return E.Abs(from_sympy(x.args[0]))
    if x.is_Pow or x.is_Mul:
        num, den = sp.fraction(x)
        if den != 1:
            n = _from_product(num) if num.is_Mul else from_sympy(num)
            d = _from_product(den) if den.is_Mul else from_sympy(den)
            if isinstance(n, E.Neg):
                return E.Neg(E.Div(n.arg, d))
            return E.Div(n, d)
        if x.is_Pow:
            return _from_pow(*x.as_base_exp())
        return _from_product(x)
    raise _Unsupported(type(x).__name__)


@lru_cache(maxsize=8192)
def _simplify_cached(e: E.Expr) -> E.Expr:
    light = fold(e)
    if isinstance(light, (E.Const, E.Var)) or (isinstance(light, E.Neg) and isinstance(light.arg, E.Const)):
        return light
    try:
        if _has_float(light):
            s = sp.cancel(sp.together(to_sympy(light, rewrite_radicals=False)))
        else:
            s = _split_abs_powers(sp.together(to_sympy(light)))
            s = sp.factor(sp.cancel(sp.together(s)))
        out = fold(from_sympy(s))
    except (_Unsupported, sp.PolynomialError, ValueError, TypeError, ZeroDivisionError,
            OverflowError):
        return light
    if E.node_count(out) > E.node_count(light) * 4 + 16:
        return light
    return out


def simplify(e: E.Expr, budget: int = E.DEFAULT_NODE_BUDGET) -> E.Expr:
    """Return a normal form of ``e`` with equal values wherever both are finite.

    Raises :class:`ExpressionTooLarge` if the input exceeds ``budget`` nodes.
    """
    E.check_budget(e, budget)
    return _simplify_cached(e)
