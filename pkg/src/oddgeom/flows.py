"""Integral curves and geodesics through the degeneracy locus.

Right-hand sides with algebroid poles are multiplied by an analytic factor
``h >= 0`` that clears every denominator.  The cleared system ``y' = h R(y)``
is integrated in an auxiliary parameter ``k`` together with ``dt/dk = h(y)``;
since ``h`` is nonnegative with isolated zeros, ``t(k)`` is strictly
increasing and the original curve is ``x(t) = y(k(t))``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import quad, solve_ivp

from . import expr as E
from .compiled import Program
from .curves import CallableSegment, PiecewiseCurve
from .errors import (NotMonotone, SingularStart, StallAtSingularity,
                     TangentPoleContradiction)
from .frames import FRAME, VectorField, _s, _sum, gram_schmidt_frame
from .metric import OddMetric

K_LIMIT = 1e9


# ---------------------------------------------------------------------------
# clearing factor


def _denominator_factors(e: E.Expr, out: dict):
    """Collect ``base -> exponent`` for the multiplicative factors of every denominator."""
    for node in E.iter_nodes(e):
        if isinstance(node, E.Div):
            _add_factors(node.right, 1, out)
        elif isinstance(node, E.IntPow) and node.exponent < 0:
            _add_factors(node.base, -node.exponent, out)


def _add_factors(d: E.Expr, mult: int, out: dict):
    if isinstance(d, E.Mul):
        _add_factors(d.left, mult, out)
        _add_factors(d.right, mult, out)
    elif isinstance(d, E.Neg):
        _add_factors(d.arg, mult, out)
    elif isinstance(d, E.Const):
        return
    elif isinstance(d, E.IntPow) and d.exponent > 0:
        _add_factors(d.base, mult * d.exponent, out)
    elif isinstance(d, (E.Sqrt, E.Abs)):
        out[d] = max(out.get(d, 0), mult)
    else:
        # polynomial base: keep h >= 0 by taking |b| for odd powers
        key = d if mult % 2 == 0 else E.Abs(d)
        if mult % 2 == 0:
            out[("even", d)] = max(out.get(("even", d), 0), mult)
        else:
            out[key] = max(out.get(key, 0), mult)


def clearing_factor(exprs: Sequence[E.Expr]) -> E.Expr:
    """Least common multiple of the denominator factors of ``exprs``.

    ``sqrt``/``abs`` factors are kept as they are; a polynomial factor ``b^e``
    contributes ``b^e`` for even ``e`` and ``|b|^e`` for odd ``e``, so the
    result is nonnegative.
    """
    found: dict = {}
    for e in exprs:
        _denominator_factors(E.simplify(e), found)
    parts = []
    for key in sorted(found, key=lambda k: E.to_string(k[1] if isinstance(k, tuple) else k)):
        mult = found[key]
        base = key[1] if isinstance(key, tuple) else key
        parts.append(base if mult == 1 else E.IntPow(base, mult))
    if not parts:
        return E.ONE
    h = parts[0]
    for p in parts[1:]:
        h = E.Mul(h, p)
    return E.simplify(h)


# ---------------------------------------------------------------------------
# problems and traces


@dataclass
class FlowOptions:
    rtol: float = 1e-10
    atol: float = 1e-12
    method: str = "DOP853"
    event_tol: float = 1e-10
    singular_tol: float = 1e-10
    k_limit: float = K_LIMIT


@dataclass
class FlowProblem:
    """Integral curve of ``field`` (frame or coordinate components) from ``p0``.

    The curve passes through ``p0`` at time ``t0``: 0 if ``tspan`` contains 0,
    otherwise ``tspan[0]``.
    """

    metric: OddMetric
    field: VectorField
    p0: Sequence[float]
    tspan: tuple[float, float]
    options: FlowOptions = field(default_factory=FlowOptions)

    def __post_init__(self):
        a, b = map(float, self.tspan)
        if not a < b:
            raise ValueError("tspan must be increasing")
        self.tspan = (a, b)
        self.p0 = np.asarray(self.p0, dtype=float)
        if self.p0.shape != (self.metric.dim,):
            raise ValueError(f"start point needs {self.metric.dim} coordinates")
        if self.field.dim != self.metric.dim:
            raise ValueError("field dimension does not match the metric")

    @property
    def t0(self) -> float:
        a, b = self.tspan
        return 0.0 if a <= 0.0 <= b else a


@dataclass
class GeodesicProblem:
    metric: OddMetric
    p0: Sequence[float]
    v0: Sequence[float]
    tspan: tuple[float, float]
    # second-order system with 1/x-sized symbols near the locus: tighter than flows
    options: FlowOptions = field(default_factory=lambda: FlowOptions(rtol=1e-12, atol=1e-14))

    def __post_init__(self):
        a, b = map(float, self.tspan)
        if not a < b:
            raise ValueError("tspan must be increasing")
        self.tspan = (a, b)
        self.p0 = np.asarray(self.p0, dtype=float)
        self.v0 = np.asarray(self.v0, dtype=float)
        n = self.metric.dim
        if self.p0.shape != (n,) or self.v0.shape != (n,):
            raise ValueError(f"start point and velocity need {n} coordinates")
        if not np.linalg.norm(self.v0) > 0:
            raise ValueError("initial velocity must be nonzero")

    @property
    def t0(self) -> float:
        a, b = self.tspan
        return 0.0 if a <= 0.0 <= b else a


@dataclass
class TimeMap:
    """Monotone ``t(k)`` and its inverse ``k(t)``."""

    t_of_k: Callable
    k_range: tuple[float, float]
    t_range: tuple[float, float]

    def k_of_t(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        tlo, thi = self.t_range
        if np.any(t < tlo - 1e-12 * (1 + abs(tlo))) or np.any(t > thi + 1e-12 * (1 + abs(thi))):
            raise ValueError(f"time outside the solved range {self.t_range}")
        return _bisect_inverse(self.t_of_k, np.clip(t, tlo, thi), *self.k_range)

    __call__ = k_of_t


def _bisect_inverse(F, targets, lo, hi, iters=200):
    """Vectorized bisection for increasing ``F`` on ``[lo, hi]``."""
    lo = np.full_like(targets, lo, dtype=float)
    hi = np.full_like(targets, hi, dtype=float)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        below = F(mid) < targets
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.all(hi - lo <= 2 * np.spacing(np.maximum(np.abs(lo), np.abs(hi)))):
            break
    # pick the closer end
    flo, fhi = F(lo), F(hi)
    return np.where(np.abs(flo - targets) <= np.abs(fhi - targets), lo, hi)


def invert_time_map(f, k_range: tuple[float, float], k0: float = 0.0,
                    nodes: int = 401, tol: float = 1e-12) -> TimeMap:
    """``t(k) = int_{k0}^k f`` for ``f >= 0`` and its continuous increasing inverse.

    ``f`` is a callable or a pair ``(k_samples, f_samples)`` (linear
    interpolation).  Cumulative values use adaptive quadrature on a grid that
    contains ``k0``; inversion is bracketed bisection.
    """
    if not callable(f):
        ks, fs = (np.asarray(a, dtype=float) for a in f)
        order = np.argsort(ks)
        ks, fs = ks[order], fs[order]
        if np.any(fs < -tol):
            raise NotMonotone("time density takes negative values")
        fun = lambda k: np.interp(k, ks, fs)
        grid = np.union1d(ks, [k0])
        grid = grid[(grid >= k_range[0]) & (grid <= k_range[1])]
        grid = np.union1d(grid, k_range)
    else:
        fun = f
        grid = np.union1d(np.linspace(k_range[0], k_range[1], nodes), [k0])
    klo, khi = map(float, k_range)
    if not klo <= k0 <= khi:
        raise ValueError("k0 must lie inside k_range")
    pieces = []
    for a, b in zip(grid[:-1], grid[1:]):
        val, _ = quad(lambda k: float(fun(k)), a, b, epsabs=1e-15, epsrel=1e-13, limit=200)
        if val < -tol * max(1.0, b - a):
            raise NotMonotone(f"cumulative time decreases on [{a}, {b}]")
        pieces.append(max(val, 0.0))
    cum = np.concatenate([[0.0], np.cumsum(pieces)])
    j0 = int(np.searchsorted(grid, k0))
    cum = cum - cum[j0]
    if np.any(np.diff(cum) <= 0):
        raise NotMonotone("time density vanishes on a whole interval")
    gl_x, gl_w = np.polynomial.legendre.leggauss(20)
    fvec = np.vectorize(lambda k: float(fun(k)))

    def t_of_k(k):
        k = np.clip(np.atleast_1d(np.asarray(k, dtype=float)), klo, khi)
        j = np.clip(np.searchsorted(grid, k, side="right") - 1, 0, len(grid) - 2)
        a = grid[j]
        half = 0.5 * (k - a)
        X = a[:, None] + half[:, None] * (gl_x[None, :] + 1.0)
        return cum[j] + half * (fvec(X) @ gl_w)

    return TimeMap(t_of_k, (klo, khi), (float(cum[0]), float(cum[-1])))


@dataclass
class DesingularizationTrace:
    h: E.Expr
    cleared: tuple[E.Expr, ...]
    k_nodes: np.ndarray
    y_nodes: np.ndarray
    t_nodes: np.ndarray
    f_nodes: np.ndarray
    time_map: TimeMap
    crossings: list[float]
    stopped: str = ""
    density: Callable | None = field(default=None, repr=False)  # k -> h(y(k)), dense


# ---------------------------------------------------------------------------
# cleared systems


def field_rhs(m: OddMetric, X: VectorField) -> tuple[E.Expr, ...]:
    """Coordinate components of ``X`` (``X^j E_j^i`` for frame fields)."""
    if X.basis == FRAME and X.frame.metric != m:
        raise ValueError("field frame belongs to a different metric")
    return X.to_coords().components


@lru_cache(maxsize=128)
def cleared_system(rhs: tuple[E.Expr, ...]) -> tuple[E.Expr, tuple[E.Expr, ...]]:
    h = clearing_factor(rhs)
    return h, tuple(_s(E.Mul(h, r)) for r in rhs)


class _LimitRHS:
    """Compiled vector function with a neighborhood average where the value is not finite."""

    def __init__(self, exprs, dim, scale=1e-9):
        self.prog = Program.build(list(exprs), dim)
        self.dim = dim
        self.scale = scale

    def __call__(self, y):
        v = self.prog.at(y)
        if np.all(np.isfinite(v)):
            return v
        return self.limit(y)

    def limit(self, y):
        d = self.scale * max(1.0, float(np.linalg.norm(y)))
        offs = []
        for i in range(self.dim):
            for s in (-1.0, 1.0):
                q = np.array(y, dtype=float)
                q[i] += s * d
                offs.append(q)
        V = self.prog(np.array(offs))
        ok = np.all(np.isfinite(V), axis=1)
        if not ok.any():
            return np.full(len(self.prog.outputs), np.nan)
        return V[ok].mean(axis=0)

    def batch(self, Y):
        V = self.prog(Y)
        bad = ~np.all(np.isfinite(V), axis=1)
        for k in np.flatnonzero(bad):
            V[k] = self.limit(Y[k])
        return V


def _strata_axes(m: OddMetric) -> list[int]:
    return sorted({i for s in m.strata for i in s.vanishing})


def _solve_cleared(rhs_fn, h_fn, y0, t_start, t_target, m: OddMetric, opts: FlowOptions,
                   direction: float, extra_events=()):
    """Integrate ``(y, t)' = (C(y), h(y))`` in k until ``t`` reaches the target."""
    lo = np.array([b[0] for b in m.box])
    hi = np.array([b[1] for b in m.box])
    n = m.dim

    def fun(k, z):
        y = z[:n]
        return np.concatenate([rhs_fn(y), [h_fn(y)]])

    def reach(k, z):
        return z[n] - t_target
    reach.terminal = True

    def leave(k, z):
        y = z[:n]
        return float(np.min(np.concatenate([y - lo, hi - y]))) + 1e-9
    leave.terminal = True
    leave.direction = -1

    events = [reach, leave]
    for i in _strata_axes(m):
        ev = (lambda k, z, i=i: z[i])
        events.append(ev)
    events.extend(extra_events)
    z0 = np.concatenate([y0, [t_start]])
    sol = solve_ivp(fun, (0.0, direction * opts.k_limit), z0, method=opts.method,
                    rtol=opts.rtol, atol=opts.atol, dense_output=True, events=events)
    return sol


def _snap(t_range, tspan, rel=1e-9):
    """Replace event-located end times by the requested ones they approximate."""
    out = []
    for t, want in zip(t_range, tspan):
        t = float(t)
        out.append(float(want) if abs(t - want) <= rel * (1.0 + abs(want)) else t)
    return tuple(out)


def integrate_flow(fp: FlowProblem):
    """Integral curve through ``p0`` and the desingularization data.

    Returns ``(curve, trace)``.  Raises :class:`SingularStart` if ``p0`` is a
    zero of the cleared field on the locus, :class:`TangentPoleContradiction`
    if the trajectory runs inside the zero set of ``h`` and
    :class:`StallAtSingularity` if time stops advancing.
    """
    m, opts = fp.metric, fp.options
    n = m.dim
    rhs = tuple(field_rhs(m, fp.field))
    h, cleared = cleared_system(rhs)
    C = _LimitRHS(cleared, n)
    H = _LimitRHS([h], n)
    h_fn = lambda y: float(H(y)[0])
    p0 = fp.p0
    if not m.in_box(p0):
        raise ValueError(f"start point {p0.tolist()} is outside the domain box")
    c0 = C(p0)
    if h_fn(p0) <= opts.singular_tol and np.linalg.norm(c0) <= opts.singular_tol:
        dirs = radial_directions(m, fp.field, p0) if n == 2 else []
        raise SingularStart(
            f"{p0.tolist()} is a zero of the cleared field; restart along one of the radial "
            f"directions (offset 1e-6)", dirs)

    t0 = fp.t0
    runs = []
    if fp.tspan[1] > t0:
        runs.append((1.0, fp.tspan[1]))
    if fp.tspan[0] < t0:
        runs.append((-1.0, fp.tspan[0]))
    parts = []
    stopped = []
    for direction, target in runs:
        sol = _solve_cleared(C, h_fn, p0, t0, target, m, opts, direction)
        k_end = float(sol.t[-1])
        t_end = float(sol.y[n, -1])
        if sol.t_events[0].size == 0:
            moved = float(np.max(np.linalg.norm(sol.y[:n].T - p0, axis=1)))
            hs = np.array([h_fn(y) for y in sol.y[:n].T])
            if moved > 1e-8 and np.max(hs) <= opts.singular_tol:
                raise TangentPoleContradiction(
                    "trajectory stays in the zero set of the clearing factor; "
                    "the field is tangent to a stratum where it has a pole")
            if sol.t_events[1].size:
                stopped.append(f"left the domain box at t = {t_end:.6g}")
            else:
                raise StallAtSingularity(
                    f"time stalls at t = {t_end:.6g} (k = {k_end:.3g}); "
                    f"the clearing factor has a non-isolated zero along the trajectory")
        parts.append((direction, sol))
    if not parts:
        raise ValueError("empty time span")

    # assemble k-ordered nodes and a dense evaluator
    sols = {d: s for d, s in parts}
    k_lo = float(sols[-1.0].t[-1]) if -1.0 in sols else 0.0
    k_hi = float(sols[1.0].t[-1]) if 1.0 in sols else 0.0

    def Z(k):
        k = np.atleast_1d(np.asarray(k, dtype=float))
        out = np.empty((n + 1, len(k)))
        pos = k >= 0
        if 1.0 in sols and pos.any():
            out[:, pos] = sols[1.0].sol(np.clip(k[pos], 0.0, k_hi))
        neg = ~pos
        if neg.any():
            if -1.0 in sols:
                out[:, neg] = sols[-1.0].sol(np.clip(k[neg], k_lo, 0.0))
            else:
                out[:, neg] = sols[1.0].sol(np.zeros(neg.sum()))
        if not (1.0 in sols) and pos.any():
            out[:, pos] = sols[-1.0].sol(np.zeros(pos.sum()))
        return out

    t_of_k = lambda k: Z(k)[n]
    tm = TimeMap(t_of_k, (k_lo, k_hi), _snap((t_of_k(k_lo)[0], t_of_k(k_hi)[0]), fp.tspan))
    k_nodes = np.unique(np.concatenate([s.t for _, s in parts]))
    Zn = Z(k_nodes)
    y_nodes, t_nodes = Zn[:n].T, Zn[n]
    f_nodes = np.array([h_fn(y) for y in y_nodes])
    cross_k = sorted({float(k) for _, s in parts for ev in s.t_events[2:] for k in ev})
    crossings = sorted({float(t_of_k(k)[0]) for k in cross_k
                        if tm.t_range[0] < float(t_of_k(k)[0]) < tm.t_range[1]})

    R = _LimitRHS(rhs, n)

    def position(ts):
        return Z(tm.k_of_t(ts))[:n].T

    def velocity(ts):
        Y = position(ts)
        return R.prog(Y)

    edges = [tm.t_range[0]] + [c for c in crossings] + [tm.t_range[1]]
    edges = sorted(set(edges))
    node_ts = np.unique(t_nodes)
    segs = []
    for a, b in zip(edges[:-1], edges[1:]):
        if b - a <= 1e-14 * max(1.0, abs(b)):
            continue
        inner = node_ts[(node_ts > a) & (node_ts < b)]
        segs.append(CallableSegment(a, b, position, velocity,
                                    nodes=np.concatenate([[a], inner, [b]])))
    curve = PiecewiseCurve(segs, continuity_tol=1e-8)
    trace = DesingularizationTrace(h, cleared, k_nodes, y_nodes, t_nodes, f_nodes, tm,
                                   crossings, "; ".join(stopped),
                                   density=lambda k: h_fn(Z(k)[:n, 0]))
    return curve, trace


# ---------------------------------------------------------------------------
# radial directions


@dataclass
class RadialDirection:
    direction: np.ndarray
    tag: str  # "inbound" or "outbound"
    residual: float

    @property
    def slope(self) -> float:
        d = self.direction
        return float(d[1] / d[0]) if abs(d[0]) > 1e-15 else math.inf


def radial_directions(m: OddMetric, X: VectorField, p, radius: float = 1e-3,
                      n_angles: int = 4096, xtol: float = 1e-10) -> list[RadialDirection]:
    """Unit directions ``d`` with the cleared field at ``p + r d`` parallel to ``d``.

    The cross residual ``d x (h X)(p + r d)`` is swept over ``n_angles``
    directions (planar case), sign changes are bracketed and refined by
    bisection.  Each direction is tagged inbound or outbound by the sign of
    the radial component.
    """
    n = m.dim
    p = np.asarray(p, dtype=float)
    rhs = tuple(field_rhs(m, X))
    h, cleared = cleared_system(rhs)
    F = _LimitRHS(cleared, n)

    if n == 1:
        out = []
        for d in (np.array([1.0]), np.array([-1.0])):
            v = F(p + radius * d)
            if np.all(np.isfinite(v)) and abs(v[0]) > 0:
                out.append(RadialDirection(d, "outbound" if v[0] * d[0] > 0 else "inbound", 0.0))
        return out
    if n != 2:
        return _radial_directions_nd(F, p, radius, n)

    def field_at(theta):
        d = np.column_stack([np.cos(theta), np.sin(theta)])
        return d, F.batch(p + radius * d)

    def resid(theta):
        d, v = field_at(np.atleast_1d(theta))
        nv = np.linalg.norm(v, axis=1)
        nv[nv == 0] = 1.0
        return (d[:, 0] * v[:, 1] - d[:, 1] * v[:, 0]) / nv

    thetas = np.linspace(-np.pi, np.pi, n_angles + 1)
    r = resid(thetas)
    out = []
    roots = []
    for k in range(n_angles):
        a, b = thetas[k], thetas[k + 1]
        ra, rb = r[k], r[k + 1]
        if not (np.isfinite(ra) and np.isfinite(rb)):
            continue
        if ra == 0.0:
            roots.append(a)
            continue
        if ra * rb > 0:
            continue
        while b - a > xtol:
            mid = 0.5 * (a + b)
            rm = resid(mid)[0]
            if ra * rm <= 0:
                b, rb = mid, rm
            else:
                a, ra = mid, rm
        roots.append(0.5 * (a + b))
    for th in roots:
        d, v = field_at(np.array([th]))
        d, v = d[0], v[0]
        radial = float(d @ v)
        nv = np.linalg.norm(v)
        # reject sign changes of the residual where the field flips through zero
        if nv == 0 or abs(radial) < 0.5 * nv:
            continue
        cross = abs(float(resid(th)[0]))
        out.append(RadialDirection(d, "outbound" if radial > 0 else "inbound", cross))
    # the sweep endpoints -pi and pi coincide
    uniq = []
    for rd in out:
        if all(np.linalg.norm(rd.direction - u.direction) > 1e-8 for u in uniq):
            uniq.append(rd)
    return uniq


def _radial_directions_nd(F, p, radius, n, count=4000):
    from scipy.optimize import minimize

    rng = np.random.default_rng(0)
    D = rng.normal(size=(count, n))
    D /= np.linalg.norm(D, axis=1, keepdims=True)

    def resid(d):
        d = d / np.linalg.norm(d)
        v = F(p + radius * d)
        nv = np.linalg.norm(v)
        if not np.isfinite(nv) or nv == 0:
            return 1.0
        return float(np.linalg.norm(v / nv - (d @ v / nv) * d))

    vals = np.array([resid(d) for d in D])
    out = []
    for idx in np.argsort(vals)[:50]:
        res = minimize(resid, D[idx], method="Nelder-Mead",
                       options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 4000})
        d = res.x / np.linalg.norm(res.x)
        if res.fun > 1e-6:
            continue
        v = F(p + radius * d)
        if all(np.linalg.norm(d - o.direction) > 1e-4 for o in out):
            out.append(RadialDirection(d, "outbound" if d @ v > 0 else "inbound", res.fun))
    return out


def lines(directions: Sequence[RadialDirection], tol: float = 1e-6) -> list[np.ndarray]:
    """Merge antipodal directions into lines (returned as unit vectors with x >= 0)."""
    out: list[np.ndarray] = []
    for rd in directions:
        d = rd.direction.copy()
        lead = next((x for x in d if abs(x) > 1e-12), 1.0)
        if lead < 0:
            d = -d
        if all(np.linalg.norm(d - o) > tol for o in out):
            out.append(d)
    return out


# ---------------------------------------------------------------------------
# geodesics


@lru_cache(maxsize=32)
def frame_christoffel(m: OddMetric) -> tuple:
    """Frame symbols ``K^k_ij`` with ``D_{E_i} E_j = K^k_ij E_k``."""
    from .connection import christoffel

    frame = gram_schmidt_frame(m)
    n = m.dim
    G = christoffel(m)
    F = frame.E
    eps = frame.coframe
    out = [[[None] * n for _ in range(n)] for _ in range(n)]
    for i in range(n):
        for j in range(n):
            # coordinate components of D_{E_i} E_j
            comp = []
            for b in range(n):
                terms = [E.Mul(F[i][a], E.differentiate(F[j][b], a))
                         for a in range(n) if F[i][a] != E.ZERO and F[j][b] != E.ZERO]
                for a in range(n):
                    for c in range(n):
                        if G[b, a, c] != E.ZERO and F[i][a] != E.ZERO and F[j][c] != E.ZERO:
                            terms.append(E.Mul(G[b, a, c], E.Mul(F[i][a], F[j][c])))
                comp.append(_s(_sum(terms)) if terms else E.ZERO)
            for k in range(n):
                terms = [E.Mul(eps[k][b], comp[b]) for b in range(n)
                         if eps[k][b] != E.ZERO and comp[b] != E.ZERO]
                out[k][i][j] = _s(_sum(terms)) if terms else E.ZERO
    return tuple(tuple(tuple(r) for r in t) for t in out)


@lru_cache(maxsize=32)
def _geodesic_system(m: OddMetric):
    frame = gram_schmidt_frame(m)
    n = m.dim
    K = frame_christoffel(m)
    hE = frame.denominator
    Fh = [_s(E.Mul(hE, frame.E[i][a])) for i in range(n) for a in range(n)]
    Kh = [_s(E.Mul(hE, K[k][i][j])) for k in range(n) for i in range(n) for j in range(n)]
    return frame, hE, _LimitRHS(Fh, n), _LimitRHS(Kh, n), _LimitRHS([hE], n)


def integrate_geodesic(gp: GeodesicProblem) -> PiecewiseCurve:
    """Geodesic with initial point ``p0`` and classical velocity ``v0``.

    The state is the position and the velocity components ``w`` in the
    orthonormal frame: ``x' = w^i E_i``, ``w'^k = -K^k_ij w^i w^j``.  Both
    equations are multiplied by the frame's clearing factor and integrated in
    the auxiliary parameter as for flows, so the curve passes through the
    degeneracy locus with ``|w|`` (the metric speed) conserved.
    """
    m, opts = gp.metric, gp.options
    n = m.dim
    frame, hE, FH, KH, H = _geodesic_system(m)
    if not m.in_box(gp.p0):
        raise ValueError(f"start point {gp.p0.tolist()} is outside the domain box")
    eps0 = frame.coframe_program.at(gp.p0).reshape(n, n)
    if not np.all(np.isfinite(eps0)):
        raise SingularStart(f"coframe is not finite at {gp.p0.tolist()}; start off the locus")
    w0 = eps0 @ gp.v0

    def rhs(z):
        x, w = z[:n], z[n:]
        Fm = FH(x).reshape(n, n)
        Km = KH(x).reshape(n, n, n)
        return np.concatenate([Fm.T @ w, -np.einsum("kij,i,j->k", Km, w, w)])

    h_fn = lambda z: float(H(z[:n])[0])

    # reuse the flow driver on the doubled state with the box extended to velocities
    big = float(np.linalg.norm(w0)) * 1e6 + 1.0
    ext = OddMetric.euclidean(2 * n, box=list(m.box) + [(-big, big)] * n)
    ext = ext.with_strata([s.vanishing for s in m.strata])
    z0 = np.concatenate([gp.p0, w0])
    t0 = gp.t0
    sols = {}
    for direction, target in ((1.0, gp.tspan[1]), (-1.0, gp.tspan[0])):
        if (direction > 0 and target <= t0) or (direction < 0 and target >= t0):
            continue
        sol = _solve_cleared(rhs, h_fn, z0, t0, target, ext, opts, direction)
        if sol.t_events[0].size == 0 and sol.t_events[1].size == 0:
            raise StallAtSingularity(f"geodesic time stalls at t = {sol.y[2 * n, -1]:.6g}")
        sols[direction] = sol
    k_lo = float(sols[-1.0].t[-1]) if -1.0 in sols else 0.0
    k_hi = float(sols[1.0].t[-1]) if 1.0 in sols else 0.0

    def Z(k):
        k = np.atleast_1d(np.asarray(k, dtype=float))
        out = np.empty((2 * n + 1, len(k)))
        for d, s in sols.items():
            sel = k >= 0 if d > 0 else k < 0
            if sel.any():
                out[:, sel] = s.sol(np.clip(k[sel], min(0.0, s.t[-1]), max(0.0, s.t[-1])))
        missing = ~((k >= 0) if 1.0 in sols else np.zeros(len(k), bool)) & \
            ~((k < 0) if -1.0 in sols else np.zeros(len(k), bool))
        if missing.any():
            any_sol = next(iter(sols.values()))
            out[:, missing] = any_sol.sol(np.zeros(missing.sum()))
        return out

    t_of_k = lambda k: Z(k)[2 * n]
    tm = TimeMap(t_of_k, (k_lo, k_hi), _snap((t_of_k(k_lo)[0], t_of_k(k_hi)[0]), gp.tspan))
    Fprog = frame.program

    def state(ts):
        return Z(tm.k_of_t(ts))

    def position(ts):
        return state(ts)[:n].T

    def velocity(ts):
        S = state(ts)
        X, W = S[:n].T, S[n:2 * n].T
        Fm = Fprog(X).reshape(-1, n, n)
        return np.einsum("pia,pi->pa", Fm, W)

    def frame_velocity(ts):
        return state(ts)[n:2 * n].T

    k_nodes = np.unique(np.concatenate([s.t for s in sols.values()]))
    t_nodes = np.unique(t_of_k(k_nodes))
    cross_k = sorted({float(k) for s in sols.values() for ev in s.t_events[2:] for k in ev})
    crossings = sorted({float(t_of_k(k)[0]) for k in cross_k})
    crossings = [c for c in crossings if tm.t_range[0] < c < tm.t_range[1]]
    edges = sorted({tm.t_range[0], tm.t_range[1], *crossings})
    segs = []
    for a, b in zip(edges[:-1], edges[1:]):
        if b - a <= 1e-14 * max(1.0, abs(b)):
            continue
        inner = t_nodes[(t_nodes > a) & (t_nodes < b)]
        segs.append(CallableSegment(a, b, position, velocity,
                                    nodes=np.concatenate([[a], inner, [b]])))
    curve = PiecewiseCurve(segs, continuity_tol=1e-8)
    curve.frame_velocity = frame_velocity
    curve.crossings = crossings
    curve.time_map = tm
    return curve


def geodesic_residual(m: OddMetric, curve: PiecewiseCurve, ts, rel_step: float = 1e-5) -> np.ndarray:
    """``|x'' + G(x', x')|`` with ``x''`` from central differences of the velocity.

    Entries are NaN where the stencil leaves the curve or the symbols are not finite.
    """
    from .connection import christoffel

    table = christoffel(m)
    ts = np.asarray(ts, dtype=float)
    h = rel_step * (curve.b - curve.a)
    inside = (ts - 2 * h >= curve.a) & (ts + 2 * h <= curve.b)
    out = np.full(len(ts), np.nan)
    t = ts[inside]
    if not t.size:
        return out
    offs = np.array([-2.0, -1.0, 0.0, 1.0, 2.0])
    V = curve.velocity((t[:, None] + h * offs[None, :]).ravel()).reshape(len(t), 5, -1)
    acc = (V[:, 0] - 8 * V[:, 1] + 8 * V[:, 3] - V[:, 4]) / (12 * h)
    Gam, ok = table.eval(curve.position(t))
    v = V[:, 2]
    res = np.linalg.norm(acc + np.einsum("pijk,pj,pk->pi", Gam, v, v), axis=1)
    res[~ok | ~np.all(np.isfinite(acc), axis=1)] = np.nan
    out[inside] = res
    return out


# ---------------------------------------------------------------------------
# perturbation experiment


@dataclass
class ExperimentRow:
    epsilon: float
    seed_id: int
    dist_to_p: float
    direction: np.ndarray
    exit_tag: str
    entry: np.ndarray | None = None
    exit: np.ndarray | None = None


@dataclass
class ExperimentReport:
    rows: list[ExperimentRow]
    p: np.ndarray
    solutions: dict = field(default_factory=dict, repr=False)

    def medians(self) -> dict[float, float]:
        out = {}
        for eps in sorted({r.epsilon for r in self.rows}, reverse=True):
            d = [r.dist_to_p for r in self.rows if r.epsilon == eps and np.isfinite(r.dist_to_p)]
            out[eps] = float(np.median(d)) if d else math.nan
        return out

    def to_csv(self, path, coords) -> None:
        head = ["epsilon", "seed_id", "dist_to_p"] + [f"dir_{c}" for c in coords] + ["exit_tag"]
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(head) + "\n")
            for r in self.rows:
                vals = [f"{r.epsilon:.17g}", str(r.seed_id), f"{r.dist_to_p:.17g}"]
                vals += [f"{x:.17g}" for x in r.direction] + [r.exit_tag]
                fh.write(",".join(vals) + "\n")


def sector_seeds(p, radius: float, theta_lo: float, theta_hi: float, count: int) -> np.ndarray:
    """``count`` points on the circle of ``radius`` about ``p`` strictly inside an angular sector."""
    th = np.linspace(theta_lo, theta_hi, count + 2)[1:-1]
    p = np.asarray(p, dtype=float)
    return p + radius * np.column_stack([np.cos(th), np.sin(th)])


def perturbed_flow_experiment(m: OddMetric, X: VectorField, eps_list: Sequence[float], p,
                              seeds, transversal_axis: int, ball_radius: float | None = None,
                              options: FlowOptions | None = None,
                              k_max: float = 1e5) -> ExperimentReport:
    """Integrate ``y' = h X(y) + eps`` (eps added to every coordinate) from each seed.

    Records the first crossing of the transversal hyperplane
    ``{x_axis = p_axis}`` (the entry point), its distance to ``p`` and the
    normalized direction of motion there, then follows the trajectory until it
    leaves the ball of ``2 * ball_radius`` (the exit point).  ``eps = 0`` runs
    the unperturbed cleared system, identical to :func:`integrate_flow`.
    """
    opts = options or FlowOptions()
    n = m.dim
    p = np.asarray(p, dtype=float)
    seeds = np.atleast_2d(np.asarray(seeds, dtype=float))
    if ball_radius is None:
        ball_radius = float(np.max(np.linalg.norm(seeds - p, axis=1)))
    rhs = tuple(field_rhs(m, X))
    h, cleared = cleared_system(rhs)
    C = _LimitRHS(cleared, n)
    rows, sols = [], {}
    for eps in eps_list:
        shift = np.full(n, float(eps))
        for sid, y0 in enumerate(seeds):
            def fun(k, y, shift=shift):
                return C(y) + shift

            def cross(k, y):
                return y[transversal_axis] - p[transversal_axis]
            cross.terminal = False

            def leave(k, y):
                return np.linalg.norm(y - p) - 2.0 * ball_radius
            leave.terminal = True
            leave.direction = 1

            sol = solve_ivp(fun, (0.0, k_max), y0, method=opts.method, rtol=opts.rtol,
                            atol=opts.atol, dense_output=True, events=[cross, leave])
            sols[(float(eps), sid)] = sol
            entries = sol.t_events[0]
            entries = entries[entries > 0]
            if entries.size == 0:
                tag = "exit_without_entry" if sol.t_events[1].size else "no_entry"
                rows.append(ExperimentRow(float(eps), sid, math.nan, np.full(n, math.nan), tag))
                continue
            k_in = float(entries[0])
            y_in = sol.sol(k_in)
            v_in = fun(k_in, y_in)
            nv = np.linalg.norm(v_in)
            direction = v_in / nv if nv > 0 else np.full(n, math.nan)
            if sol.t_events[1].size:
                tag = "exit"
                y_out = sol.y_events[1][0]
            else:
                tag = "trapped"
                y_out = None
            rows.append(ExperimentRow(float(eps), sid, float(np.linalg.norm(y_in - p)),
                                      direction, tag, y_in, y_out))
    return ExperimentReport(rows, p, sols)
