"""Scalar expressions in named chart coordinates.

Expressions are immutable trees built from constants, coordinate variables,
the four field operations, integer powers, ``sqrt`` and ``abs``.  Square
roots and absolute values give the nonnegative branches of the algebroid
functions that show up in orthonormal frames of degenerate metrics.

Evaluation never raises on a singularity; it returns an :class:`EvalResult`
tagged ``FINITE``, ``POLE`` or ``INDETERMINATE`` so that integrators can route
around the degeneracy locus.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction
from numbers import Rational
from typing import Iterable, Sequence

DEFAULT_POLE_GUARD = 1e-12
DEFAULT_NODE_BUDGET = 20_000

Number = int | Fraction | float


class ExpressionError(ValueError):
    pass


class ExpressionSyntaxError(ExpressionError):
    """Malformed expression text; ``offset`` is a UTF-8 byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class UnknownIdentifier(ExpressionSyntaxError):
    def __init__(self, name: str, offset: int):
        super().__init__(f"unknown identifier {name!r}", offset)
        self.name = name


class ExpressionTooLarge(ExpressionError):
    pass


# ---------------------------------------------------------------------------
# nodes


class Expr:
    __slots__ = ("_hash",)
    children: tuple = ()

    def _key(self) -> tuple:
        raise NotImplementedError

    def __hash__(self) -> int:
        try:
            return self._hash
        except AttributeError:
            h = hash((type(self).__name__,) + self._key())
            object.__setattr__(self, "_hash", h)
            return h

    def __eq__(self, other) -> bool:
        if self is other:
            return True
        if type(self) is not type(other) or hash(self) != hash(other):
            return False
        return self._key() == other._key()

    def __ne__(self, other) -> bool:
        return not self == other

    def __setattr__(self, name, value):
        raise AttributeError(f"{type(self).__name__} is immutable")

    def __repr__(self) -> str:
        return f"{type(self).__name__}({', '.join(map(repr, self._key()))})"

    def __str__(self) -> str:
        return to_string(self)

    # arithmetic sugar; no simplification happens here
    def __add__(self, other):
        return Add(self, as_expr(other))

    def __radd__(self, other):
        return Add(as_expr(other), self)

    def __sub__(self, other):
        return Sub(self, as_expr(other))

    def __rsub__(self, other):
        return Sub(as_expr(other), self)

    def __mul__(self, other):
        return Mul(self, as_expr(other))

    def __rmul__(self, other):
        return Mul(as_expr(other), self)

    def __truediv__(self, other):
        return Div(self, as_expr(other))

    def __rtruediv__(self, other):
        return Div(as_expr(other), self)

    def __neg__(self):
        return Neg(self)

    def __pow__(self, n):
        return IntPow(self, n)


def _normalize_number(value) -> Number:
    if isinstance(value, bool):
        raise TypeError("booleans are not expression constants")
    if isinstance(value, int):
        return value
    if isinstance(value, Fraction):
        return value.numerator if value.denominator == 1 else value
    if isinstance(value, Rational):
        return _normalize_number(Fraction(value.numerator, value.denominator))
    value = float(value)
    if not math.isfinite(value):
        raise ExpressionError(f"non-finite constant {value!r}")
    return value


class Const(Expr):
    __slots__ = ("value",)

    def __init__(self, value):
        object.__setattr__(self, "value", _normalize_number(value))

    def _key(self):
        return (self.value,)

    @property
    def is_exact(self) -> bool:
        return not isinstance(self.value, float)


class Var(Expr):
    __slots__ = ("index",)

    def __init__(self, index: int):
        if not isinstance(index, int) or index < 0:
            raise ExpressionError(f"bad variable index {index!r}")
        object.__setattr__(self, "index", index)

    def _key(self):
        return (self.index,)


class _Binary(Expr):
    __slots__ = ("left", "right")
    symbol = "?"

    def __init__(self, left: Expr, right: Expr):
        if not isinstance(left, Expr) or not isinstance(right, Expr):
            raise TypeError("operands must be Expr")
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)

    @property
    def children(self):
        return (self.left, self.right)

    def _key(self):
        return (self.left, self.right)


class Add(_Binary):
    __slots__ = ()
    symbol = "+"


class Sub(_Binary):
    __slots__ = ()
    symbol = "-"


class Mul(_Binary):
    __slots__ = ()
    symbol = "*"


class Div(_Binary):
    __slots__ = ()
    symbol = "/"

    def __init__(self, left: Expr, right: Expr):
        if isinstance(right, Const) and right.value == 0:
            raise ExpressionError("division by the literal constant zero")
        super().__init__(left, right)


class _Unary(Expr):
    __slots__ = ("arg",)

    def __init__(self, arg: Expr):
        if not isinstance(arg, Expr):
            raise TypeError("operand must be Expr")
        object.__setattr__(self, "arg", arg)

    @property
    def children(self):
        return (self.arg,)

    def _key(self):
        return (self.arg,)


class Neg(_Unary):
    __slots__ = ()


class Sqrt(_Unary):
    __slots__ = ()


class Abs(_Unary):
    __slots__ = ()


class IntPow(Expr):
    __slots__ = ("base", "exponent")

    def __init__(self, base: Expr, exponent: int):
        if not isinstance(base, Expr):
            raise TypeError("base must be Expr")
        if isinstance(exponent, bool) or not isinstance(exponent, int):
            raise ExpressionError(f"exponent must be an integer, got {exponent!r}")
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "exponent", exponent)

    @property
    def children(self):
        return (self.base,)

    def _key(self):
        return (self.base, self.exponent)


ZERO = Const(0)
ONE = Const(1)


def as_expr(value) -> Expr:
    return value if isinstance(value, Expr) else Const(value)


# ---------------------------------------------------------------------------
# structural helpers


def iter_nodes(e: Expr) -> Iterable[Expr]:
    """Unique nodes of the expression DAG in post-order."""
    seen: set[int] = set()
    out: list[Expr] = []
    stack: list[tuple[Expr, bool]] = [(e, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            out.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for c in reversed(node.children):
            if id(c) not in seen:
                stack.append((c, False))
    return out


def node_count(e: Expr) -> int:
    """Number of tree nodes (shared subtrees counted once per use)."""
    counts: dict[int, int] = {}
    for node in iter_nodes(e):
        counts[id(node)] = 1 + sum(counts[id(c)] for c in node.children)
    return counts[id(e)]


def check_budget(e: Expr, budget: int = DEFAULT_NODE_BUDGET) -> Expr:
    n = node_count(e)
    if n > budget:
        raise ExpressionTooLarge(f"expression has {n} nodes (budget {budget})")
    return e


def max_var_index(e: Expr) -> int:
    return max((n.index for n in iter_nodes(e) if isinstance(n, Var)), default=-1)


def free_vars(e: Expr) -> set[int]:
    return {n.index for n in iter_nodes(e) if isinstance(n, Var)}


def _rebuild(node: Expr, kids: Sequence[Expr]) -> Expr:
    if isinstance(node, _Binary):
        return type(node)(kids[0], kids[1])
    if isinstance(node, _Unary):
        return type(node)(kids[0])
    if isinstance(node, IntPow):
        return IntPow(kids[0], node.exponent)
    return node


def substitute(e: Expr, mapping: dict[int, Expr]) -> Expr:
    """Replace variables by expressions (simultaneously)."""
    memo: dict[int, Expr] = {}
    for node in iter_nodes(e):
        if isinstance(node, Var):
            memo[id(node)] = mapping.get(node.index, node)
        elif node.children:
            kids = [memo[id(c)] for c in node.children]
            if all(k is c for k, c in zip(kids, node.children)):
                memo[id(node)] = node
            else:
                memo[id(node)] = _rebuild(node, kids)
        else:
            memo[id(node)] = node
    return memo[id(e)]


def reindex(e: Expr, mapping: dict[int, int]) -> Expr:
    return substitute(e, {old: Var(new) for old, new in mapping.items()})


# ---------------------------------------------------------------------------
# printing

_PREC = {Add: 1, Sub: 1, Mul: 2, Div: 2, Neg: 3, IntPow: 4}
_ATOM = 5


def _const_text(value: Number) -> tuple[str, int]:
    if isinstance(value, Fraction):
        text = f"{value.numerator}/{value.denominator}"
        return (text, _ATOM) if value > 0 else (text, _PREC[Neg])
    text = repr(value) if isinstance(value, float) else str(value)
    return text, (_PREC[Neg] if value < 0 else _ATOM)


def default_coord_names(n: int) -> list[str]:
    if n <= 3:
        return ["x", "y", "z"][:n]
    return [f"x{i + 1}" for i in range(n)]


def to_string(e: Expr, coords: Sequence[str] | None = None) -> str:
    """Render ``e`` in the input grammar; ``parse`` reads it back."""
    if coords is None:
        coords = default_coord_names(max(max_var_index(e) + 1, 0))
    memo: dict[int, tuple[str, int]] = {}

    def wrap(child: Expr, need: int, strict: bool) -> str:
        text, prec = memo[id(child)]
        if prec < need or (strict and prec == need):
            return f"({text})"
        return text

    for node in iter_nodes(e):
        if isinstance(node, Const):
            memo[id(node)] = _const_text(node.value)
            if isinstance(node.value, Fraction):
                # a/b must not merge with a surrounding product
                memo[id(node)] = (memo[id(node)][0], _PREC[Mul])
        elif isinstance(node, Var):
            memo[id(node)] = (coords[node.index], _ATOM)
        elif isinstance(node, (Add, Sub, Mul, Div)):
            p = _PREC[type(node)]
            left = wrap(node.left, p, False)
            right = wrap(node.right, p, True)
            sep = f" {node.symbol} " if p == 1 else node.symbol
            memo[id(node)] = (left + sep + right, p)
        elif isinstance(node, Neg):
            memo[id(node)] = ("-" + wrap(node.arg, _PREC[Neg], False), _PREC[Neg])
        elif isinstance(node, IntPow):
            base = wrap(node.base, _ATOM, False)
            memo[id(node)] = (f"{base}^{node.exponent}", _PREC[IntPow])
        elif isinstance(node, Sqrt):
            memo[id(node)] = (f"sqrt({memo[id(node.arg)][0]})", _ATOM)
        elif isinstance(node, Abs):
            memo[id(node)] = (f"abs({memo[id(node.arg)][0]})", _ATOM)
    return memo[id(e)][0]


# ---------------------------------------------------------------------------
# parsing

_FUNCTIONS = {"sqrt": Sqrt, "abs": Abs}


class _Parser:
    def __init__(self, text: str, coords: Sequence[str]):
        self.text = text
        self.coords = {name: i for i, name in enumerate(coords)}
        self.tokens = self._tokenize(text)
        self.pos = 0

    def _offset(self, char_index: int) -> int:
        return len(self.text[:char_index].encode("utf-8"))

    def _tokenize(self, text: str):
        tokens = []
        i, n = 0, len(text)
        while i < n:
            c = text[i]
            if c.isspace():
                i += 1
            elif c.isdigit() or (c == "." and i + 1 < n and text[i + 1].isdigit()):
                j = i
                while j < n and text[j].isdigit():
                    j += 1
                is_float = False
                if j < n and text[j] == ".":
                    is_float = True
                    j += 1
                    while j < n and text[j].isdigit():
                        j += 1
                if j < n and text[j] in "eE":
                    k = j + 1
                    if k < n and text[k] in "+-":
                        k += 1
                    if k < n and text[k].isdigit():
                        is_float = True
                        j = k
                        while j < n and text[j].isdigit():
                            j += 1
                lexeme = text[i:j]
                tokens.append(("num", float(lexeme) if is_float else int(lexeme), i))
                i = j
            elif c.isalpha() or c == "_":
                j = i
                while j < n and (text[j].isalnum() or text[j] == "_"):
                    j += 1
                tokens.append(("id", text[i:j], i))
                i = j
            elif c in "+-*/^()":
                tokens.append((c, c, i))
                i += 1
            else:
                raise ExpressionSyntaxError(f"unexpected character {c!r}", self._offset(i))
        tokens.append(("end", None, n))
        return tokens

    def peek(self):
        return self.tokens[self.pos]

    def take(self, kind=None):
        tok = self.tokens[self.pos]
        if kind is not None and tok[0] != kind:
            what = "end of input" if tok[0] == "end" else repr(tok[1])
            raise ExpressionSyntaxError(f"expected {kind!r}, found {what}", self._offset(tok[2]))
        self.pos += 1
        return tok

    def parse(self) -> Expr:
        e = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            raise ExpressionSyntaxError(f"unexpected {tok[1]!r}", self._offset(tok[2]))
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek()[0] in "+-":
            op = self.take()[0]
            rhs = self.term()
            e = Add(e, rhs) if op == "+" else Sub(e, rhs)
        return e

    def term(self) -> Expr:
        e = self.factor()
        while self.peek()[0] in ("*", "/"):
            op = self.take()[0]
            rhs = self.factor()
            e = Mul(e, rhs) if op == "*" else Div(e, rhs)
        return e

    def factor(self) -> Expr:
        if self.peek()[0] == "-":
            self.take()
            return Neg(self.factor())
        base = self.atom()
        if self.peek()[0] == "^":
            self.take()
            sign = 1
            if self.peek()[0] == "-":
                self.take()
                sign = -1
            tok = self.peek()
            if tok[0] != "num" or not isinstance(tok[1], int):
                what = "end of input" if tok[0] == "end" else repr(tok[1])
                raise ExpressionSyntaxError(
                    f"exponent must be an integer literal, found {what}", self._offset(tok[2]))
            self.take()
            return IntPow(base, sign * tok[1])
        return base

    def atom(self) -> Expr:
        tok = self.peek()
        kind = tok[0]
        if kind == "num":
            self.take()
            return Const(tok[1])
        if kind == "(":
            self.take()
            e = self.expr()
            self.take(")")
            return e
        if kind == "id":
            self.take()
            name = tok[1]
            if name in _FUNCTIONS:
                self.take("(")
                arg = self.expr()
                self.take(")")
                return _FUNCTIONS[name](arg)
            if name in self.coords:
                return Var(self.coords[name])
            raise UnknownIdentifier(name, self._offset(tok[2]))
        what = "end of input" if kind == "end" else repr(tok[1])
        raise ExpressionSyntaxError(f"unexpected {what}", self._offset(tok[2]))


def parse(text: str, coords: Sequence[str]) -> Expr:
    """Parse ``text`` with variables named by ``coords`` (index = position)."""
    bad = [c for c in coords if c in _FUNCTIONS]
    if bad:
        raise ExpressionError(f"coordinate names shadow functions: {bad}")
    return _Parser(text, coords).parse()


# ---------------------------------------------------------------------------
# evaluation


class EvalTag(enum.Enum):
    FINITE = "finite"
    POLE = "pole"
    INDETERMINATE = "indeterminate"


@dataclass(frozen=True)
class EvalResult:
    tag: EvalTag
    value: Number | None = None
    node: Expr | None = None

    @property
    def is_finite(self) -> bool:
        return self.tag is EvalTag.FINITE

    @classmethod
    def finite(cls, value):
        return cls(EvalTag.FINITE, value)

    def __float__(self) -> float:
        if not self.is_finite:
            raise ExpressionError(f"value is {self.tag.value} at {self.node}")
        return float(self.value)


def _exact_sqrt(v: Number) -> Number:
    if isinstance(v, (int, Fraction)):
        f = Fraction(v)
        rn, rd = math.isqrt(f.numerator), math.isqrt(f.denominator)
        if rn * rn == f.numerator and rd * rd == f.denominator:
            return _normalize_number(Fraction(rn, rd))
    return math.sqrt(v)


def _power(base: Number, n: int) -> Number:
    # square-and-multiply; the compiled kernels use the same order
    result: Number = 1.0 if isinstance(base, float) else 1
    e = n
    while e:
        if e & 1:
            result = result * base
        e >>= 1
        if e:
            base = base * base
    return result


def evaluate(e: Expr, point: Sequence[Number], guard: float = DEFAULT_POLE_GUARD) -> EvalResult:
    """Evaluate ``e`` at ``point`` by direct recursion over the tree.

    Exact (int/Fraction) inputs stay exact except through ``sqrt`` of a
    non-square.  This is the reference semantics; :mod:`oddgeom.compiled`
    implements the same rules for batches of float points.
    """
    if guard <= 0:
        raise ValueError("guard must be positive")
    memo: dict[int, EvalResult] = {}

    def fail(tag, node):
        return EvalResult(tag, None, node)

    def checked(v, node):
        if isinstance(v, float):
            if math.isnan(v):
                return fail(EvalTag.INDETERMINATE, node)
            if math.isinf(v):
                return fail(EvalTag.POLE, node)
        return EvalResult.finite(v)

    for node in iter_nodes(e):
        if isinstance(node, Const):
            res = EvalResult.finite(node.value)
        elif isinstance(node, Var):
            if node.index >= len(point):
                raise ExpressionError(f"variable index {node.index} outside point of length {len(point)}")
            res = EvalResult.finite(point[node.index])
        else:
            kids = [memo[id(c)] for c in node.children]
            bad = next((k for k in kids if not k.is_finite), None)
            if bad is not None:
                res = bad
            else:
                vals = [k.value for k in kids]
                try:
                    res = _apply(node, vals, guard, fail, checked)
                except OverflowError:
                    res = fail(EvalTag.POLE, node)
        memo[id(node)] = res
    return memo[id(e)]


def _apply(node, vals, guard, fail, checked) -> EvalResult:
    if isinstance(node, Add):
        return checked(vals[0] + vals[1], node)
    if isinstance(node, Sub):
        return checked(vals[0] - vals[1], node)
    if isinstance(node, Mul):
        return checked(vals[0] * vals[1], node)
    if isinstance(node, Neg):
        return checked(-vals[0], node)
    if isinstance(node, Div):
        num, den = vals
        if abs(den) < guard:
            return fail(EvalTag.POLE if abs(num) >= guard else EvalTag.INDETERMINATE, node)
        return checked(num / den, node)
    if isinstance(node, IntPow):
        n = node.exponent
        p = _power(vals[0], abs(n))
        if n >= 0:
            return checked(p, node)
        if abs(p) < guard:
            return fail(EvalTag.POLE, node)
        return checked(Fraction(1) / p if not isinstance(p, float) else 1.0 / p, node)
    if isinstance(node, Sqrt):
        v = vals[0]
        if v < -guard:
            return fail(EvalTag.INDETERMINATE, node)
        if v < 0:
            return EvalResult.finite(0)
        return checked(_exact_sqrt(v), node)
    if isinstance(node, Abs):
        return EvalResult.finite(abs(vals[0]))
    raise TypeError(f"unknown node {node!r}")


def evaluate_float(e: Expr, point: Sequence[float], guard: float = DEFAULT_POLE_GUARD) -> float:
    return float(evaluate(e, [float(p) for p in point], guard))


# ---------------------------------------------------------------------------
# differentiation


def _is_const(e: Expr, value) -> bool:
    return isinstance(e, Const) and e.value == value


def _add(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0):
        return b
    if _is_const(b, 0):
        return a
    return Add(a, b)


def _sub(a: Expr, b: Expr) -> Expr:
    if _is_const(b, 0):
        return a
    if _is_const(a, 0):
        return Neg(b)
    return Sub(a, b)


def _mul(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0) or _is_const(b, 0):
        return ZERO
    if _is_const(a, 1):
        return b
    if _is_const(b, 1):
        return a
    return Mul(a, b)


def _div(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0):
        return ZERO
    if _is_const(b, 1):
        return a
    return Div(a, b)


def differentiate(e: Expr, i: int) -> Expr:
    """Exact partial derivative with respect to variable ``i``.

    Only zero/one identities are folded; call :func:`simplify` for a
    normal form.  ``d|f| = f df / |f|`` and ``d sqrt(f) = df / (2 sqrt(f))``
    hold off the zero set of ``f``.
    """
    memo: dict[int, Expr] = {}
    for node in iter_nodes(e):
        if isinstance(node, Const):
            d = ZERO
        elif isinstance(node, Var):
            d = ONE if node.index == i else ZERO
        elif isinstance(node, Add):
            d = _add(memo[id(node.left)], memo[id(node.right)])
        elif isinstance(node, Sub):
            d = _sub(memo[id(node.left)], memo[id(node.right)])
        elif isinstance(node, Neg):
            da = memo[id(node.arg)]
            d = ZERO if _is_const(da, 0) else Neg(da)
        elif isinstance(node, Mul):
            a, b = node.left, node.right
            d = _add(_mul(memo[id(a)], b), _mul(a, memo[id(b)]))
        elif isinstance(node, Div):
            a, b = node.left, node.right
            da, db = memo[id(a)], memo[id(b)]
            if _is_const(db, 0):
                d = _div(da, b)
            else:
                d = _div(_sub(_mul(da, b), _mul(a, db)), IntPow(b, 2))
        elif isinstance(node, IntPow):
            n, f = node.exponent, node.base
            df = memo[id(f)]
            if n == 0 or _is_const(df, 0):
                d = ZERO
            elif n == 1:
                d = df
            else:
                lower = f if n == 2 else IntPow(f, n - 1)
                d = _mul(_mul(Const(n), lower), df)
        elif isinstance(node, Sqrt):
            df = memo[id(node.arg)]
            d = _div(df, Mul(Const(2), node))
        elif isinstance(node, Abs):
            df = memo[id(node.arg)]
            d = _div(_mul(node.arg, df), node)
        else:
            raise TypeError(f"unknown node {node!r}")
        memo[id(node)] = d
    return memo[id(e)]


def gradient_exprs(e: Expr, dim: int) -> list[Expr]:
    return [differentiate(e, i) for i in range(dim)]


# simplify lives in its own module (sympy-backed); re-exported here
from .simplify import simplify  # noqa: E402
