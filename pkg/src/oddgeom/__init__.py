"""Orthogonally degenerating Riemannian metrics on coordinate charts."""
from .expr import (Abs, Add, Const, Div, EvalResult, EvalTag, Expr, ExpressionError,
                   ExpressionSyntaxError, ExpressionTooLarge, IntPow, Mul, Neg, Sqrt, Sub,
                   UnknownIdentifier, Var, differentiate, evaluate, parse, simplify, substitute,
                   to_string)
from .compiled import Program, compile_exprs
from .kernels import BACKEND

__version__ = "0.1.0"
