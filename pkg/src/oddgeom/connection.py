"""Levi-Civita connection of an ODD metric."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Callable

import numpy as np

from . import expr as E
from .compiled import Program
from .curves import PiecewiseCurve
from .errors import PoleOnLocus
from .frames import VectorField, _s, _sum, inverse_metric
from .metric import OddMetric, sample_points

LIMIT_STEPS = (1e-3, 1e-4, 1e-5)


@dataclass(frozen=True, eq=False)
class ChristoffelTable:
    """``gamma[k][i][j]`` holds the symbol with upper index ``k``; the lower pair shares storage."""

    gamma: tuple[tuple[tuple[E.Expr, ...], ...], ...]
    metric: OddMetric

    @property
    def dim(self) -> int:
        return len(self.gamma)

    def __getitem__(self, kij):
        k, i, j = kij
        return self.gamma[k][i][j]

    @cached_property
    def program(self) -> Program:
        n = self.dim
        return Program.build([self.gamma[k][i][j] for k in range(n) for i in range(n)
                              for j in range(n)], n)

    def eval(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Symbols at the rows of ``X`` as (N, n, n, n) plus a finiteness mask."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        vals, tags, _ = self.program.run(X)
        n = self.dim
        return vals.reshape(-1, n, n, n), np.all(tags == 0, axis=1)

    def is_symmetric(self) -> bool:
        n = self.dim
        return all(self.gamma[k][i][j] == self.gamma[k][j][i]
                   for k in range(n) for i in range(n) for j in range(n))


@lru_cache(maxsize=64)
def christoffel(m: OddMetric) -> ChristoffelTable:
    """``G^k_ij = 1/2 g^{kl} (d_i g_jl + d_j g_il - d_l g_ij)``."""
    n = m.dim
    inv = inverse_metric(m)
    dg = [[[E.differentiate(m.g(i, j), l) for l in range(n)] for j in range(n)] for i in range(n)]
    half = E.Div(E.ONE, E.Const(2))
    table = [[[None] * n for _ in range(n)] for _ in range(n)]
    for k in range(n):
        for i in range(n):
            for j in range(i, n):
                terms = []
                for l in range(n):
                    if inv[k][l] == E.ZERO:
                        continue
                    first = E.Sub(E.Add(dg[j][l][i], dg[i][l][j]), dg[i][j][l])
                    terms.append(E.Mul(inv[k][l], first))
                val = _s(E.Mul(half, _sum(terms))) if terms else E.ZERO
                table[k][i][j] = table[k][j][i] = val
    return ChristoffelTable(tuple(tuple(tuple(r) for r in t) for t in table), m)


def covariant_derivative(m: OddMetric, X: VectorField, Y: VectorField) -> VectorField:
    """Coordinate components ``X^i d_i Y^k + G^k_ij X^i Y^j``."""
    n = m.dim
    Xc, Yc = X.to_coords().components, Y.to_coords().components
    G = christoffel(m)
    out = []
    for k in range(n):
        terms = [E.Mul(Xc[i], E.differentiate(Yc[k], i)) for i in range(n) if Xc[i] != E.ZERO]
        for i in range(n):
            for j in range(n):
                if G[k, i, j] != E.ZERO and Xc[i] != E.ZERO and Yc[j] != E.ZERO:
                    terms.append(E.Mul(G[k, i, j], E.Mul(Xc[i], Yc[j])))
        out.append(_s(_sum(terms)) if terms else E.ZERO)
    return VectorField(tuple(out))


# ---------------------------------------------------------------------------
# verification


@dataclass
class ConnectionReport:
    passed: bool
    torsion_free: bool
    max_compat_error: float
    max_torsion_error: float
    n_points: int
    failures: list = field(default_factory=list)

    def to_dict(self):
        return {"passed": self.passed, "torsion_free": self.torsion_free,
                "max_compat_error": self.max_compat_error,
                "max_torsion_error": self.max_torsion_error, "n_points": self.n_points,
                "failures": self.failures}


def random_polynomial_field(n: int, rng: np.random.Generator, degree: int = 2) -> list[E.Expr]:
    """Integer-coefficient polynomial components of total degree at most ``degree``."""
    monos = [m for d in range(degree + 1)
             for m in _exponents(n, d)]
    comps = []
    for _ in range(n):
        terms = []
        for mono in monos:
            c = int(rng.integers(-3, 4))
            if c == 0:
                continue
            t = E.Const(c)
            for i, p in enumerate(mono):
                if p:
                    t = E.Mul(t, E.Var(i) if p == 1 else E.IntPow(E.Var(i), p))
            terms.append(t)
        comps.append(_sum(terms) if terms else E.ONE)
    return comps


def _exponents(n, d):
    if n == 1:
        yield (d,)
        return
    for k in range(d + 1):
        for rest in _exponents(n - 1, d - k):
            yield (k,) + rest


def verify_connection(m: OddMetric, samples: int = 50, seed: int = 0, rtol: float = 1e-5,
                      h: float = 1e-6, locus_margin: float = 0.05) -> ConnectionReport:
    """Check metric compatibility by finite differences and torsion-freeness.

    At sampled points at least ``locus_margin`` (relative to the box) away from
    the strata, random polynomial fields X, Y, Z satisfy
    ``X g(Y, Z) = g(D_X Y, Z) + g(Y, D_X Z)`` up to ``rtol``.  Torsion-freeness
    is the structural symmetry of the table, plus ``D_X Y - D_Y X = [X, Y]``
    checked numerically.
    """
    n = m.dim
    rng = np.random.default_rng(seed)
    table = christoffel(m)
    X = sample_points(m, max(4 * samples, 64), seed)
    width = min(hi - lo for lo, hi in m.box)
    X = X[m.stratum_distance(X) > locus_margin * width]
    lo = np.array([b[0] for b in m.box]) + 2 * h
    hi = np.array([b[1] for b in m.box]) - 2 * h
    X = X[np.all((X > lo) & (X < hi), axis=1)][:samples]
    fields = [random_polynomial_field(n, rng) for _ in range(3)]
    progs = [Program.build(f, n) for f in fields]
    jacs = [Program.build([E.differentiate(c, i) for c in f for i in range(n)], n) for f in fields]
    Gam, okG = table.eval(X)
    Gm, okM = m.eval_matrix(X)
    ok = okG & okM
    Xv, Yv, Zv = (p(X) for p in progs)
    JX, JY, JZ = (j(X).reshape(-1, n, n) for j in jacs)  # J[p, k, i] = d_i F^k

    def nabla(A, JB, B):
        return np.einsum("pi,pki->pk", A, JB) + np.einsum("pkij,pi,pj->pk", Gam, A, B)

    rhs = np.einsum("pa,pab,pb->p", nabla(Xv, JY, Yv), Gm, Zv) + \
        np.einsum("pa,pab,pb->p", Yv, Gm, nabla(Xv, JZ, Zv))
    lhs = np.empty(len(X))
    for p in range(len(X)):
        x0, d = X[p], Xv[p]
        step = h / max(1.0, np.linalg.norm(d))

        def gyz(pt):
            G = m.at(pt)
            return progs[1].at(pt) @ G @ progs[2].at(pt)

        lhs[p] = (gyz(x0 + step * d) - gyz(x0 - step * d)) / (2 * step)
    err = np.abs(lhs - rhs) / (1.0 + np.abs(lhs))
    err[~ok] = 0.0
    failures = [{"point": X[p].tolist(), "lhs": float(lhs[p]), "rhs": float(rhs[p])}
                for p in np.flatnonzero(err > rtol)]
    # torsion: D_X Y - D_Y X - [X, Y]
    bracket = np.einsum("pi,pki->pk", Xv, JY) - np.einsum("pi,pki->pk", Yv, JX)
    tors = nabla(Xv, JY, Yv) - nabla(Yv, JX, Xv) - bracket
    tors_err = float(np.max(np.abs(tors[ok]) / (1.0 + np.abs(bracket[ok])))) if ok.any() else 0.0
    sym = table.is_symmetric()
    compat = float(np.max(err)) if len(err) else 0.0
    return ConnectionReport(
        passed=sym and not failures and tors_err <= rtol,
        torsion_free=sym,
        max_compat_error=compat,
        max_torsion_error=tors_err,
        n_points=int(ok.sum()),
        failures=failures,
    )


# ---------------------------------------------------------------------------
# along curves


def _richardson(values: np.ndarray, hs: np.ndarray) -> np.ndarray:
    """Limit as h -> 0 of a polynomial-in-h fit through the samples."""
    A = np.vander(hs, len(hs), increasing=True)
    return np.linalg.solve(A, values)[0]


def _diverges(values: np.ndarray) -> bool:
    """True when samples at geometrically shrinking steps move apart instead of settling."""
    d1 = np.max(np.abs(values[1] - values[0]))
    d2 = np.max(np.abs(values[2] - values[1]))
    return bool(d2 > d1 and d2 > 1e-8 * (1 + np.max(np.abs(values[2]))))


def covariant_derivative_along_curve(m: OddMetric, curve: PiecewiseCurve,
                                     V: Callable | VectorField | tuple, t: float,
                                     guard: float = E.DEFAULT_POLE_GUARD) -> np.ndarray:
    """``(D_t V)^i = dV^i/dt + G^i_jk(gamma) gamma'^j V^k`` at parameter ``t``.

    ``V`` is a callable ``t -> components``, a field evaluated along the curve,
    or samples ``(ts, values)`` interpolated by a cubic spline.  Where the
    symbols have a pole on the curve, the value is a two-sided limit built by
    Richardson extrapolation from ``t +- h``.
    """
    from scipy.interpolate import CubicSpline

    table = christoffel(m)
    if isinstance(V, VectorField):
        prog = V.program

        def Vfun(ts):
            return prog(curve.position(ts))
    elif isinstance(V, tuple):
        spline = CubicSpline(np.asarray(V[0], dtype=float), np.asarray(V[1], dtype=float), axis=0)

        def Vfun(ts):
            return spline(np.atleast_1d(ts))
    else:
        def Vfun(ts):
            return np.atleast_2d(np.array([V(u) for u in np.atleast_1d(ts)], dtype=float))

    def value(u):
        P = curve.position([u])
        Gam, ok = table.eval(P)
        if not ok[0]:
            return None
        dv = _derivative(Vfun, u, curve)
        if dv is None:
            return None
        vel = curve.velocity([u])[0]
        Vu = Vfun([u])[0]
        out = dv + np.einsum("ijk,j,k->i", Gam[0], vel, Vu)
        return out if np.all(np.isfinite(out)) else None

    direct = value(t)
    if direct is not None:
        return direct
    width = curve.b - curve.a
    hs = np.array(LIMIT_STEPS) * width
    sides = []
    for sign in (-1.0, 1.0):
        us = t + sign * hs
        if np.any(us < curve.a) or np.any(us > curve.b):
            continue
        vals = [value(u) for u in us]
        if any(v is None for v in vals):
            continue
        vals = np.array(vals)
        if np.max(np.abs(vals)) > 1.0 / guard or _diverges(vals):
            raise PoleOnLocus(f"covariant derivative grows without bound near t = {t}")
        sides.append(_richardson(vals, hs))
    if not sides:
        raise PoleOnLocus(f"covariant derivative cannot be resolved at t = {t}")
    return np.mean(sides, axis=0)


def _derivative(Vfun, u, curve, rel: float = 1e-5):
    """Fourth-order central difference of ``Vfun`` at ``u`` (one-sided near the ends)."""
    h = rel * max(1.0, abs(u))
    lo, hi = curve.a, curve.b
    if u - 2 * h >= lo and u + 2 * h <= hi:
        F = Vfun([u - 2 * h, u - h, u + h, u + 2 * h])
        d = (F[0] - 8 * F[1] + 8 * F[2] - F[3]) / (12 * h)
    elif u + 2 * h <= hi:
        F = Vfun([u, u + h, u + 2 * h])
        d = (-3 * F[0] + 4 * F[1] - F[2]) / (2 * h)
    else:
        F = Vfun([u - 2 * h, u - h, u])
        d = (F[0] - 4 * F[1] + 3 * F[2]) / (2 * h)
    return d if np.all(np.isfinite(d)) else None
