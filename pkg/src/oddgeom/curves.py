"""Piecewise curves: speed, length, regularity and reparametrization."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import IntegrationWarning, quad
from scipy.optimize import brentq

from . import expr as E
from .compiled import Program
from .errors import DegenerateSegment, EvaluationFailure, QuadratureFailure, UnboundedSpeed
from .metric import OddMetric

T = E.Var(0)
CONTINUITY_TOL = 1e-10
RICHARDSON_STEPS = (1e-2, 1e-3, 1e-4, 1e-5)


class Segment:
    """One analytic piece of a curve on ``[a, b]``."""

    a: float
    b: float

    def position(self, ts) -> np.ndarray:
        raise NotImplementedError

    def velocity(self, ts) -> np.ndarray:
        raise NotImplementedError

    def nodes(self) -> np.ndarray:
        return np.linspace(self.a, self.b, 65)

    def kinks(self) -> list[float]:
        return []

    def restricted(self, a: float, b: float) -> "Segment":
        return _Window(self, a, b)


class ExprSegment(Segment):
    """Coordinates given as expressions in the parameter ``t`` (variable 0)."""

    def __init__(self, a: float, b: float, coords: Sequence):
        self.a, self.b = float(a), float(b)
        if not self.a < self.b:
            raise ValueError(f"empty parameter interval [{a}, {b}]")
        self.source = tuple(E.as_expr(c) for c in coords)
        if any(E.max_var_index(c) > 0 for c in self.source):
            raise ValueError("curve coordinates may only depend on t")
        # the normal form usually has fewer removable singularities
        self.exprs = tuple(E.simplify(c) for c in self.source)
        self.derivs = tuple(E.simplify(E.differentiate(c, 0)) for c in self.exprs)
        self._pos = Program.build(self.exprs, 1)
        self._vel = Program.build(self.derivs, 1)

    @classmethod
    def parse(cls, a, b, texts: Sequence[str], var: str = "t") -> "ExprSegment":
        return cls(a, b, [E.parse(s, [var]) for s in texts])

    def position(self, ts):
        return self._pos(np.asarray(ts, dtype=float).reshape(-1, 1))

    def velocity(self, ts):
        return self._vel(np.asarray(ts, dtype=float).reshape(-1, 1))

    def kinks(self) -> list[float]:
        """Interior zeros of ``abs``/``sqrt`` arguments, where analyticity may fail."""
        args = {n.arg for c in self.exprs for n in E.iter_nodes(c) if isinstance(n, (E.Abs, E.Sqrt))}
        out = set()
        grid = np.linspace(self.a, self.b, 2001)
        for arg in args:
            f = Program.build([arg], 1)
            v = f(grid.reshape(-1, 1))[:, 0]
            for k in range(1, len(grid) - 1):
                if v[k] == 0.0:
                    out.add(float(grid[k]))
            for k in range(len(grid) - 1):
                if np.isfinite(v[k]) and np.isfinite(v[k + 1]) and v[k] * v[k + 1] < 0:
                    g = lambda s: float(f.at([s])[0])
                    out.add(float(brentq(g, grid[k], grid[k + 1], xtol=1e-15)))
        return sorted(t for t in out if self.a < t < self.b)


class LinearSegment(Segment):
    """Straight segment from ``p`` at ``a`` to ``q`` at ``b``."""

    def __init__(self, a: float, b: float, p, q):
        self.a, self.b = float(a), float(b)
        if not self.a < self.b:
            raise ValueError(f"empty parameter interval [{a}, {b}]")
        self.p = np.asarray(p, dtype=float)
        self.q = np.asarray(q, dtype=float)
        self._rate = (self.q - self.p) / (self.b - self.a)

    def position(self, ts):
        ts = np.asarray(ts, dtype=float).reshape(-1, 1)
        return self.p + (ts - self.a) * self._rate

    def velocity(self, ts):
        ts = np.asarray(ts, dtype=float).reshape(-1)
        return np.tile(self._rate, (len(ts), 1))


class CallableSegment(Segment):
    """Segment from position/velocity callables (e.g. dense ODE output)."""

    def __init__(self, a, b, position: Callable, velocity: Callable, nodes=None):
        self.a, self.b = float(a), float(b)
        if not self.a < self.b:
            raise ValueError(f"empty parameter interval [{a}, {b}]")
        self._p, self._v = position, velocity
        self._nodes = None if nodes is None else np.asarray(nodes, dtype=float)

    def position(self, ts):
        return np.atleast_2d(self._p(np.atleast_1d(np.asarray(ts, dtype=float))))

    def velocity(self, ts):
        return np.atleast_2d(self._v(np.atleast_1d(np.asarray(ts, dtype=float))))

    def nodes(self):
        return self._nodes if self._nodes is not None else super().nodes()


class _Window(Segment):
    def __init__(self, base: Segment, a: float, b: float):
        self.base, self.a, self.b = base, float(a), float(b)

    def position(self, ts):
        return self.base.position(ts)

    def velocity(self, ts):
        return self.base.velocity(ts)

    def nodes(self):
        n = self.base.nodes()
        inner = n[(n > self.a) & (n < self.b)]
        return np.concatenate([[self.a], inner, [self.b]])

    def kinks(self):
        return [t for t in self.base.kinks() if self.a < t < self.b]


def endpoint(seg: Segment, side: str) -> np.ndarray:
    """Position at an end of ``seg``; a one-sided limit if the value is not finite."""
    t = seg.a if side == "a" else seg.b
    p = seg.position([t])[0]
    if np.all(np.isfinite(p)):
        return p
    sign = 1.0 if side == "a" else -1.0
    hs = np.array([1e-4, 1e-5, 1e-6, 1e-7]) * min(1.0, seg.b - seg.a)
    P = seg.position(t + sign * hs)
    if not np.all(np.isfinite(P)):
        raise EvaluationFailure(f"curve is not finite near t = {t}")
    return _extrapolate(hs, P)


@dataclass
class PiecewiseCurve:
    """Continuous concatenation of segments over consecutive intervals."""

    segments: list[Segment]
    continuity_tol: float = CONTINUITY_TOL
    breakpoints: np.ndarray = field(init=False)

    def __post_init__(self):
        if not self.segments:
            raise ValueError("a curve needs at least one segment")
        bps = [self.segments[0].a]
        for prev, seg in zip(self.segments, self.segments[1:]):
            if abs(prev.b - seg.a) > 1e-12:
                raise ValueError(f"segments do not abut: {prev.b} vs {seg.a}")
            if isinstance(prev, _Window) and isinstance(seg, _Window) and prev.base is seg.base:
                bps.append(seg.a)
                continue
            gap = np.max(np.abs(endpoint(prev, "b") - endpoint(seg, "a")))
            if not gap <= self.continuity_tol:
                raise ValueError(f"curve jumps by {gap:.3g} at t = {seg.a}")
            bps.append(seg.a)
        bps.append(self.segments[-1].b)
        self.breakpoints = np.asarray(bps, dtype=float)

    @classmethod
    def from_exprs(cls, a, b, coords, var: str = "t") -> "PiecewiseCurve":
        """Single expression segment; strings are parsed with variable ``var``."""
        exprs = [E.parse(c, [var]) if isinstance(c, str) else c for c in coords]
        return cls([ExprSegment(a, b, exprs)])

    @classmethod
    def polyline(cls, points) -> "PiecewiseCurve":
        """Straight segments through ``points`` parametrized over [0, k]."""
        P = np.asarray(points, dtype=float)
        return cls([LinearSegment(k, k + 1, P[k], P[k + 1]) for k in range(len(P) - 1)])

    @property
    def dim(self) -> int:
        return self.segments[0].position([self.segments[0].a]).shape[1]

    @property
    def a(self) -> float:
        return float(self.breakpoints[0])

    @property
    def b(self) -> float:
        return float(self.breakpoints[-1])

    def _locate(self, ts: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.breakpoints, ts, side="right") - 1
        return np.clip(idx, 0, len(self.segments) - 1)

    def _dispatch(self, ts, attr):
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        if np.any(ts < self.a - 1e-12) or np.any(ts > self.b + 1e-12):
            raise ValueError("parameter outside the curve's domain")
        idx = self._locate(ts)
        out = np.empty((len(ts), self.dim))
        for k in np.unique(idx):
            sel = idx == k
            out[sel] = getattr(self.segments[k], attr)(ts[sel])
        return out

    def position(self, ts) -> np.ndarray:
        return self._dispatch(ts, "position")

    def velocity(self, ts) -> np.ndarray:
        return self._dispatch(ts, "velocity")

    def __call__(self, t) -> np.ndarray:
        return self.position([t])[0]

    def nodes(self) -> np.ndarray:
        parts = [seg.nodes() for seg in self.segments]
        return np.unique(np.concatenate(parts))

    def split(self, points: Sequence[float]) -> "PiecewiseCurve":
        """Insert breakpoints at the given interior parameters."""
        cuts = sorted({float(t) for t in points if self.a < t < self.b} - set(self.breakpoints.tolist()))
        if not cuts:
            return self
        segs = []
        for seg in self.segments:
            inner = [t for t in cuts if seg.a < t < seg.b]
            edges = [seg.a] + inner + [seg.b]
            if not inner:
                segs.append(seg)
                continue
            segs.extend(seg.restricted(lo, hi) for lo, hi in zip(edges[:-1], edges[1:]))
        return PiecewiseCurve(segs, self.continuity_tol)

    def kinks(self) -> list[float]:
        return sorted({t for seg in self.segments for t in seg.kinks()})

    def stratum_crossings(self, m: OddMetric) -> list[float]:
        """Parameters where a coordinate of some declared stratum changes sign."""
        axes = sorted({i for s in m.strata for i in s.vanishing})
        out = set()
        for seg in self.segments:
            grid = np.linspace(seg.a, seg.b, 2001)
            P = seg.position(grid)
            for i in axes:
                v = P[:, i]
                for k in range(1, len(grid) - 1):
                    if v[k] == 0.0 and (v[k - 1] != 0.0 or v[k + 1] != 0.0):
                        out.add(float(grid[k]))
                for k in range(len(grid) - 1):
                    if v[k] * v[k + 1] < 0:
                        f = lambda s, i=i, seg=seg: float(seg.position([s])[0, i])
                        out.add(float(brentq(f, grid[k], grid[k + 1], xtol=1e-15)))
        return sorted(out)

    def split_at_strata(self, m: OddMetric) -> "PiecewiseCurve":
        return self.split(self.stratum_crossings(m) + self.kinks())


# ---------------------------------------------------------------------------
# speed and length


def speeds(m: OddMetric, curve: PiecewiseCurve, ts) -> np.ndarray:
    """Vectorized metric speed; NaN where the metric or velocity is not finite."""
    P = curve.position(ts)
    V = curve.velocity(ts)
    G, ok = m.eval_matrix(P)
    sq = np.einsum("ni,nij,nj->n", V, G, V)
    sq = np.where((sq < 0) & (sq >= -1e-12), 0.0, sq)
    out = np.sqrt(np.where(sq < 0, np.nan, sq))
    out[~ok] = np.nan
    return out


def speed(m: OddMetric, curve: PiecewiseCurve, t: float) -> float:
    """``sqrt(g(v, v))`` at parameter ``t``."""
    s = speeds(m, curve, [t])[0]
    if not np.isfinite(s):
        raise EvaluationFailure(f"speed is not finite at t = {t}")
    return float(s)


def _quad(f, a, b, epsabs=1e-13, epsrel=1e-12, limit=400):
    """``scipy.integrate.quad`` that accepts roundoff warnings when the error estimate is small."""
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", IntegrationWarning)
        val, err = quad(f, a, b, epsabs=epsabs, epsrel=epsrel, limit=limit)
    if not np.isfinite(val):
        raise QuadratureFailure(f"integrand not finite on [{a}, {b}]")
    if caught and err > 1e-9 * (1.0 + abs(val)):
        raise QuadratureFailure(f"quadrature on [{a}, {b}] failed: {caught[0].message}")
    return val, err


def segment_length(m: OddMetric, seg: Segment) -> float:
    def f(t):
        P = seg.position([t])
        V = seg.velocity([t])
        G, ok = m.eval_matrix(P)
        if not ok[0]:
            return math.nan
        sq = float(V[0] @ G[0] @ V[0])
        return math.sqrt(max(sq, 0.0)) if sq >= -1e-12 else math.nan

    return _quad(f, seg.a, seg.b)[0]


def length(m: OddMetric, curve: PiecewiseCurve) -> float:
    """Metric length; segments are split at kinks and stratum crossings and
    integrated with open Gauss-Kronrod rules, so endpoint singularities are harmless."""
    c = curve.split_at_strata(m)
    return float(sum(segment_length(m, seg) for seg in c.segments))


# ---------------------------------------------------------------------------
# regularity


def _extrapolate(hs: np.ndarray, U: np.ndarray) -> np.ndarray:
    """Least-squares fit ``u(h) = a + b sqrt(h) + c h`` per component; returns ``a``."""
    A = np.column_stack([np.ones_like(hs), np.sqrt(hs), hs])
    coef, *_ = np.linalg.lstsq(A, U, rcond=None)
    return coef[0]


def _unit(v):
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


@dataclass
class BreakpointLimits:
    t: float
    left: np.ndarray
    right: np.ndarray
    left_frame: np.ndarray | None
    right_frame: np.ndarray | None
    match: bool


@dataclass
class RegularityReport:
    regular: bool
    limits: list[BreakpointLimits]
    max_speed: float

    def to_dict(self):
        return {
            "regular": self.regular,
            "max_speed": self.max_speed,
            "breakpoints": [
                {"t": b.t, "left": b.left.tolist(), "right": b.right.tolist(),
                 "left_frame": None if b.left_frame is None else b.left_frame.tolist(),
                 "right_frame": None if b.right_frame is None else b.right_frame.tolist(),
                 "match": b.match}
                for b in self.limits
            ],
        }


def check_odd_regular(m: OddMetric, curve: PiecewiseCurve, tol: float = 1e-4) -> RegularityReport:
    """Compare one-sided limits of the normalized velocity at every breakpoint.

    The verdict uses Euclidean normalization.  Limits of the metric-normalized
    velocity in orthonormal-frame components are reported alongside; they may
    differ by frame sign conventions across strata.
    """
    from .frames import gram_schmidt_frame

    c = curve.split_at_strata(m)
    try:
        frame = gram_schmidt_frame(m)
    except Exception:  # frame is informational only
        frame = None
    limits = []
    max_speed = 0.0
    for k in range(1, len(c.segments)):
        tb = float(c.breakpoints[k])
        width = min(c.segments[k - 1].b - c.segments[k - 1].a, c.segments[k].b - c.segments[k].a)
        hs = np.array(RICHARDSON_STEPS) * min(1.0, width)
        sides = {}
        for side, seg, sign in (("left", c.segments[k - 1], -1), ("right", c.segments[k], 1)):
            ts = tb + sign * hs
            V = seg.velocity(ts)
            P = seg.position(ts)
            if not np.all(np.isfinite(V)):
                raise EvaluationFailure(f"velocity not finite near breakpoint t = {tb}")
            sp = speeds_at(m, P, V)
            max_speed = max(max_speed, float(np.nanmax(sp)))
            if np.nanmax(sp) > 1.0 / tol:
                raise UnboundedSpeed(f"speed {np.nanmax(sp):.3g} near breakpoint t = {tb}")
            Ue = V / np.linalg.norm(V, axis=1, keepdims=True)
            lim_e = _unit(_extrapolate(hs, Ue))
            lim_f = None
            if frame is not None:
                C = frame.coframe_program(P).reshape(-1, m.dim, m.dim)
                W = np.einsum("nkb,nb->nk", C, V) / sp[:, None]
                if np.all(np.isfinite(W)):
                    lim_f = _unit(_extrapolate(hs, W))
            sides[side] = (lim_e, lim_f)
        match = bool(np.linalg.norm(sides["left"][0] - sides["right"][0]) <= tol)
        limits.append(BreakpointLimits(tb, sides["left"][0], sides["right"][0],
                                       sides["left"][1], sides["right"][1], match))
    return RegularityReport(all(b.match for b in limits), limits, max_speed)


def speeds_at(m: OddMetric, P, V) -> np.ndarray:
    G, ok = m.eval_matrix(P)
    sq = np.einsum("ni,nij,nj->n", V, G, V)
    out = np.sqrt(np.clip(sq, 0.0, None))
    out[~ok | (sq < -1e-12)] = np.nan
    return out


# ---------------------------------------------------------------------------
# reparametrization


_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)


def _graded_grid(a: float, b: float) -> np.ndarray:
    """Nodes on [a, b], geometrically refined toward both ends."""
    g = np.geomspace(1e-12, 1e-2, 21)
    u = np.concatenate([[0.0], g, np.linspace(0.01, 0.99, 99), 1.0 - g, [1.0]])
    return a + (b - a) * np.unique(u)


class ArcTable:
    """Cumulative arclength ``s(t) = s0 + int_a^t speed`` on one segment and its inverse."""

    def __init__(self, seg: Segment, speed_fn, s0: float):
        self.seg, self.speed_fn, self.s0 = seg, speed_fn, float(s0)
        self.grid = _graded_grid(seg.a, seg.b)

        def integrand(t):
            return float(speed_fn(seg.position([t]), seg.velocity([t]))[0])

        mids = 0.5 * (self.grid[:-1] + self.grid[1:])
        sp = speed_fn(seg.position(mids), seg.velocity(mids))
        # isolated zeros (tangency to the kernel) are fine; the graded end cells are
        # too short to tell them apart from a vanishing subinterval
        wide = np.diff(self.grid) >= 1e-6 * (seg.b - seg.a)
        flat = (sp < 1e-14) & wide
        if np.any(flat[:-1] & flat[1:]):
            raise DegenerateSegment(f"speed vanishes on a subinterval of [{seg.a}, {seg.b}]")
        pieces = [_quad(integrand, lo, hi)[0] for lo, hi in zip(self.grid[:-1], self.grid[1:])]
        self.cum = self.s0 + np.concatenate([[0.0], np.cumsum(pieces)])
        if not self.cum[-1] > self.s0:
            raise DegenerateSegment(f"segment [{seg.a}, {seg.b}] has zero length")

    @property
    def s1(self) -> float:
        return float(self.cum[-1])

    def _speed(self, ts):
        return self.speed_fn(self.seg.position(ts), self.seg.velocity(ts))

    def s_of_t(self, ts) -> np.ndarray:
        ts = np.clip(np.atleast_1d(np.asarray(ts, dtype=float)), self.grid[0], self.grid[-1])
        k = np.clip(np.searchsorted(self.grid, ts, side="right") - 1, 0, len(self.grid) - 2)
        lo = self.grid[k]
        half = 0.5 * (ts - lo)
        X = lo[:, None] + half[:, None] * (_GL_X[None, :] + 1.0)
        v = self._speed(X.ravel()).reshape(X.shape)
        return self.cum[k] + half * (v @ _GL_W)

    def t_of_s(self, ss) -> np.ndarray:
        ss = np.clip(np.atleast_1d(np.asarray(ss, dtype=float)), self.cum[0], self.cum[-1])
        k = np.clip(np.searchsorted(self.cum, ss, side="right") - 1, 0, len(self.grid) - 2)
        lo, hi = self.grid[k].copy(), self.grid[k + 1].copy()
        exact_hi = ss >= self.cum[-1]
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            below = self.s_of_t(mid) < ss
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
            if np.all(hi - lo <= 4e-16 * np.maximum(1.0, np.abs(hi))):
                break
        out = 0.5 * (lo + hi)
        out[exact_hi] = self.grid[-1]
        out[ss <= self.cum[0]] = self.grid[0]
        return out


class MonotoneMap:
    """Strictly increasing ``phi: [c, d] -> [a, b]``, the inverse of cumulative arclength."""

    def __init__(self, tables: list[ArcTable]):
        self.tables = tables
        self._s_edges = np.array([t.s0 for t in tables] + [tables[-1].s1])

    @property
    def domain(self):
        return float(self._s_edges[0]), float(self._s_edges[-1])

    def __call__(self, s) -> np.ndarray:
        s = np.atleast_1d(np.asarray(s, dtype=float))
        k = np.clip(np.searchsorted(self._s_edges, s, side="right") - 1, 0, len(self.tables) - 1)
        out = np.empty_like(s)
        for j in np.unique(k):
            out[k == j] = self.tables[j].t_of_s(s[k == j])
        return out

    def forward(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        edges = np.array([tb.seg.a for tb in self.tables] + [self.tables[-1].seg.b])
        k = np.clip(np.searchsorted(edges, t, side="right") - 1, 0, len(self.tables) - 1)
        out = np.empty_like(t)
        for j in np.unique(k):
            out[k == j] = self.tables[j].s_of_t(t[k == j])
        return out


class _ReparamSegment(Segment):
    """``gamma(phi(s))`` with velocity the unit tangent (in the chosen speed)."""

    def __init__(self, table: ArcTable):
        self.table, self.seg = table, table.seg
        self.a, self.b = table.s0, table.s1
        self.t0, self.t1 = self.seg.a, self.seg.b
        self.speed_fn = table.speed_fn

    def phi(self, ss):
        return self.table.t_of_s(ss)

    def position(self, ss):
        ts = self.phi(np.atleast_1d(ss))
        P = self.seg.position(ts)
        bad = ~np.all(np.isfinite(P), axis=1)
        if np.any(bad):
            lo, hi = endpoint(self.seg, "a"), endpoint(self.seg, "b")
            mid = 0.5 * (self.t0 + self.t1)
            for k in np.flatnonzero(bad):
                P[k] = lo if ts[k] <= mid else hi
        return P

    def velocity(self, ss):
        ts = self.phi(np.atleast_1d(ss))
        V = self.seg.velocity(ts)
        sp = self.speed_fn(self.seg.position(ts), V)
        ok = np.isfinite(sp) & (sp > 1e-300) & np.all(np.isfinite(V), axis=1)
        out = np.empty_like(V)
        out[ok] = V[ok] / sp[ok, None]
        for k in np.flatnonzero(~ok):
            out[k] = self._tangent(ts[k])
        return out

    def _tangent(self, t):
        # isolated zero or pole of the velocity: one-sided limit of the direction
        width = self.t1 - self.t0
        for sign in (1.0, -1.0):
            for d in (1e-8, 1e-6, 1e-4):
                u = t + sign * d * width
                if not self.t0 <= u <= self.t1:
                    continue
                V = self.seg.velocity([u])
                sp = self.speed_fn(self.seg.position([u]), V)[0]
                if np.isfinite(sp) and sp > 0 and np.all(np.isfinite(V)):
                    return V[0] / sp
        raise EvaluationFailure(f"tangent direction undefined at t = {t}")

    def nodes(self):
        return np.linspace(self.a, self.b, 65)


def _reparametrize(curve: PiecewiseCurve, speed_fn, start: float | None):
    tables = []
    s = curve.a if start is None else float(start)
    for seg in curve.segments:
        table = ArcTable(seg, speed_fn, s)
        tables.append(table)
        s = table.s1
    segs = [_ReparamSegment(t) for t in tables]
    return PiecewiseCurve(segs, max(curve.continuity_tol, 1e-9)), MonotoneMap(tables)


def _euclid_speed(P, V):
    return np.linalg.norm(V, axis=1)


def reparametrize_to_regular(m: OddMetric, curve: PiecewiseCurve, start: float | None = None):
    """Unit Euclidean speed reparametrization ``(gamma~, phi)`` with ``gamma~ = gamma o phi``.

    The new parameter starts at ``start`` (default: the curve's start).
    """
    return _reparametrize(curve.split_at_strata(m), _euclid_speed, start)


def arclength_parametrize(m: OddMetric, curve: PiecewiseCurve, start: float | None = None):
    """Reparametrize by metric arclength; the result has unit metric speed."""
    return _reparametrize(curve.split_at_strata(m), lambda P, V: speeds_at(m, P, V), start)


def compose(curve: PiecewiseCurve, phi: E.Expr, a: float, b: float) -> PiecewiseCurve:
    """Exact composition ``gamma(phi(s))`` for a single expression segment."""
    if len(curve.segments) != 1 or not isinstance(curve.segments[0], ExprSegment):
        raise ValueError("exact composition needs a single expression segment")
    seg = curve.segments[0]
    return PiecewiseCurve([ExprSegment(a, b, [E.simplify(E.substitute(c, {0: phi}))
                                              for c in seg.exprs])])


# ---------------------------------------------------------------------------
# output


def curve_table(m: OddMetric, curve: PiecewiseCurve, ts=None) -> np.ndarray:
    ts = curve.nodes() if ts is None else np.asarray(ts, dtype=float)
    P = curve.position(ts)
    return np.column_stack([ts, P, speeds(m, curve, ts)])


def write_curve_csv(m: OddMetric, curve: PiecewiseCurve, path, ts=None) -> None:
    table = curve_table(m, curve, ts)
    header = ",".join(["t", *m.coords, "speed"])
    np.savetxt(path, table, fmt="%.17g", delimiter=",", header=header, comments="")
