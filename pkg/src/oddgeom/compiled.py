"""Batch evaluation of expression lists through a register program."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import expr as E
from . import kernels
from ._fallback import ABS, ADD, CONST, DIV, MUL, NEG, POW, SQRT, SUB, VAR

_BINARY = {E.Add: ADD, E.Sub: SUB, E.Mul: MUL, E.Div: DIV}
_UNARY = {E.Neg: NEG, E.Sqrt: SQRT, E.Abs: ABS}


@dataclass
class Program:
    """Straight-line code for a list of expressions; shared subtrees run once."""

    ops: np.ndarray
    arg_a: np.ndarray
    arg_b: np.ndarray
    consts: np.ndarray
    outputs: np.ndarray
    exprs: tuple = field(repr=False)
    nodes: tuple = field(repr=False)
    dim: int = 0

    @classmethod
    def build(cls, exprs: Sequence[E.Expr], dim: int | None = None) -> "Program":
        exprs = tuple(E.as_expr(e) for e in exprs)
        reg: dict[E.Expr, int] = {}
        nodes: list[E.Expr] = []
        ops, aa, bb, consts = [], [], [], []
        const_idx: dict[float, int] = {}
        for root in exprs:
            for node in E.iter_nodes(root):
                if node in reg:
                    continue
                if isinstance(node, E.Const):
                    v = float(node.value)
                    if v not in const_idx:
                        const_idx[v] = len(consts)
                        consts.append(v)
                    op, a, b = CONST, const_idx[v], 0
                elif isinstance(node, E.Var):
                    op, a, b = VAR, node.index, 0
                elif type(node) in _BINARY:
                    op, a, b = _BINARY[type(node)], reg[node.left], reg[node.right]
                elif type(node) in _UNARY:
                    op, a, b = _UNARY[type(node)], reg[node.arg], 0
                elif isinstance(node, E.IntPow):
                    op, a, b = POW, reg[node.base], node.exponent
                else:
                    raise TypeError(f"cannot compile {node!r}")
                reg[node] = len(ops)
                nodes.append(node)
                ops.append(op)
                aa.append(a)
                bb.append(b)
        max_var = max((E.max_var_index(e) for e in exprs), default=-1)
        if dim is None:
            dim = max_var + 1
        elif max_var >= dim:
            raise E.ExpressionError(f"variable index {max_var} outside dimension {dim}")
        return cls(
            ops=np.asarray(ops, dtype=np.int32),
            arg_a=np.asarray(aa, dtype=np.int32),
            arg_b=np.asarray(bb, dtype=np.int64),
            consts=np.asarray(consts if consts else [0.0], dtype=np.float64),
            outputs=np.asarray([reg[e] for e in exprs], dtype=np.int32),
            exprs=exprs,
            nodes=tuple(nodes),
            dim=dim,
        )

    def run(self, X, guard: float = E.DEFAULT_POLE_GUARD, backend: str | None = None):
        """Evaluate at the rows of ``X``; returns ``(values, tags, locations)``.

        ``tags`` uses 0 finite, 1 pole, 2 indeterminate; ``locations`` holds
        the register index of the failing node (see :meth:`node_at`).
        """
        if guard <= 0:
            raise ValueError("guard must be positive")
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] < self.dim:
            raise E.ExpressionError(f"points have {X.shape[1]} coordinates, need {self.dim}")
        fn = kernels.get_backend(backend)[0]
        return fn(self.ops, self.arg_a, self.arg_b, self.consts, self.outputs, X, float(guard))

    def __call__(self, X, guard: float = E.DEFAULT_POLE_GUARD) -> np.ndarray:
        """Values with NaN wherever evaluation is not finite."""
        return self.run(X, guard)[0]

    def at(self, point, guard: float = E.DEFAULT_POLE_GUARD) -> np.ndarray:
        return self.run(np.asarray(point, dtype=float)[None, :], guard)[0][0]

    def node_at(self, location: int) -> E.Expr | None:
        return None if location < 0 else self.nodes[location]

    def __len__(self) -> int:
        return len(self.ops)


def compile_exprs(exprs: Sequence[E.Expr], dim: int | None = None) -> Program:
    return Program.build(exprs, dim)
