"""Upper estimates of the ODD distance and sampled metric-space checks.

The distance is the infimum of lengths of piecewise regular curves, so every
curve we build gives an upper bound.  Stage one is a shortest path in a grid
graph whose edges are straight segments weighted by their metric length;
stage two straightens the path by derivative-free descent.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from . import kernels
from .curves import PiecewiseCurve, length
from .errors import UnreachableWithinBox
from .metric import OddMetric

GL_NODES, GL_WEIGHTS = np.polynomial.legendre.leggauss(12)
GL_NODES = 0.5 * (GL_NODES + 1.0)
GL_WEIGHTS = 0.5 * GL_WEIGHTS
MIN_RESOLUTION = 8
SEGMENT_BATCH = 1 << 18  # quadrature points evaluated at once
SWEEP_GAIN = 1e-2  # halve the step once a sweep gains less than this fraction of tol
STEP_FLOOR = 1e-6  # relative to the box size


@dataclass(frozen=True)
class DistanceQuery:
    p: tuple
    q: tuple
    resolution: int = 32
    budget: int = 257  # maximum number of polyline vertices during refinement
    tol: float = 1e-4

    def __post_init__(self):
        object.__setattr__(self, "p", tuple(float(x) for x in self.p))
        object.__setattr__(self, "q", tuple(float(x) for x in self.q))
        if self.resolution < 2:
            raise ValueError("grid resolution must be at least 2")
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")


@dataclass
class DistanceResult:
    value: float
    witness: PiecewiseCurve
    resolution: int


# ---------------------------------------------------------------------------
# segment lengths


def segment_lengths(m: OddMetric, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Metric lengths of the straight segments ``A[i] -> B[i]`` (open Gauss-Legendre rule).

    Segments along which the metric cannot be evaluated get ``inf``.
    """
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    step = max(1, SEGMENT_BATCH // len(GL_NODES))
    if len(A) > step:
        # bounded memory for the n-dimensional grids
        return np.concatenate([segment_lengths(m, A[i:i + step], B[i:i + step])
                               for i in range(0, len(A), step)])
    D = B - A
    P = A[:, None, :] + GL_NODES[None, :, None] * D[:, None, :]
    G, ok = m.eval_matrix(P.reshape(-1, m.dim))
    G = G.reshape(len(A), len(GL_NODES), m.dim, m.dim)
    q = np.einsum("si,snij,sj->sn", D, G, D)
    L = np.sqrt(np.maximum(q, 0.0)) @ GL_WEIGHTS
    bad = ~ok.reshape(len(A), -1).all(axis=1) | (q < -1e-12 * (1 + np.abs(q))).any(axis=1)
    L[bad] = np.inf
    return L


# ---------------------------------------------------------------------------
# grid graph


def _directions(n: int) -> np.ndarray:
    """Half of the ``3^n - 1`` neighbor offsets (one per undirected edge)."""
    out = []
    for d in itertools.product((-1, 0, 1), repeat=n):
        d = np.array(d)
        nz = np.flatnonzero(d)
        if nz.size and d[nz[0]] > 0:
            out.append(d)
    return np.array(out)


@dataclass
class _Grid:
    metric: OddMetric
    resolution: int
    axes: list
    shape: tuple
    nodes: np.ndarray
    edges: np.ndarray  # (E, 2) node indices
    weights: np.ndarray

    def cell_corners(self, p) -> np.ndarray:
        """Indices of the corners of the grid cell containing ``p``."""
        idx = []
        for ax, x in zip(self.axes, p):
            j = int(np.clip(np.searchsorted(ax, x, side="right") - 1, 0, len(ax) - 2))
            idx.append((j, j + 1))
        return np.array([np.ravel_multi_index(c, self.shape) for c in itertools.product(*idx)])


@lru_cache(maxsize=16)
def _grid(m: OddMetric, resolution: int) -> _Grid:
    n = m.dim
    axes = [np.linspace(lo, hi, resolution + 1) for lo, hi in m.box]
    shape = tuple(len(a) for a in axes)
    mesh = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([g.ravel() for g in mesh], axis=1)
    index = np.arange(nodes.shape[0]).reshape(shape)
    edges = []
    for d in _directions(n):
        src = index[tuple(slice(max(0, -k), s - max(0, k)) for k, s in zip(d, shape))]
        dst = index[tuple(slice(max(0, k), s - max(0, -k)) for k, s in zip(d, shape))]
        edges.append(np.stack([src.ravel(), dst.ravel()], axis=1))
    edges = np.concatenate(edges)
    weights = segment_lengths(m, nodes[edges[:, 0]], nodes[edges[:, 1]])
    return _Grid(m, resolution, axes, shape, nodes, edges, weights)


def _csr(n_nodes, edges, weights):
    ok = np.isfinite(weights)
    e, w = edges[ok], weights[ok]
    src = np.concatenate([e[:, 0], e[:, 1]])
    dst = np.concatenate([e[:, 1], e[:, 0]])
    ww = np.concatenate([w, w])
    order = np.lexsort((dst, src))
    src, dst, ww = src[order], dst[order], ww[order]
    indptr = np.zeros(n_nodes + 1, dtype=np.int64)
    np.add.at(indptr, src + 1, 1)
    return np.cumsum(indptr).astype(np.int64), dst.astype(np.int64), ww.astype(np.float64)


def _shortest_paths(m: OddMetric, resolution: int, source, targets) -> list[np.ndarray]:
    """Grid-graph polylines from ``source`` to each target (points attached to their cells)."""
    g = _grid(m, resolution)
    pts = [np.asarray(source, dtype=float)] + [np.asarray(t, dtype=float) for t in targets]
    base = g.nodes.shape[0]
    extra_edges, extra_nodes = [], []
    for k, p in enumerate(pts):
        corners = g.cell_corners(p)
        extra_edges.append(np.column_stack([np.full(len(corners), base + k), corners]))
        extra_nodes.append(p)
    extra_edges = np.concatenate(extra_edges)
    all_nodes = np.concatenate([g.nodes, np.array(extra_nodes)])
    ew = segment_lengths(m, all_nodes[extra_edges[:, 0]], all_nodes[extra_edges[:, 1]])
    edges = np.concatenate([g.edges, extra_edges])
    weights = np.concatenate([g.weights, ew])
    indptr, indices, w = _csr(all_nodes.shape[0], edges, weights)
    dist, pred = kernels.dijkstra_csr(indptr, indices, w, base)
    paths = []
    for k in range(1, len(pts)):
        node = base + k
        if not np.isfinite(dist[node]):
            paths.append(None)
            continue
        chain = [node]
        while chain[-1] != base:
            chain.append(int(pred[chain[-1]]))
        poly = all_nodes[chain[::-1]]
        poly[0], poly[-1] = pts[0], pts[k]
        paths.append(poly)
    return paths


# ---------------------------------------------------------------------------
# refinement


def _string_pull(m: OddMetric, P: np.ndarray) -> np.ndarray:
    """Greedily drop vertices whose removal does not lengthen the polyline."""
    pts = [P[0]]
    i = 1
    while i < len(P) - 1:
        a, v, b = pts[-1], P[i], P[i + 1]
        two = segment_lengths(m, np.array([a, v]), np.array([v, b])).sum()
        one = segment_lengths(m, a[None], b[None])[0]
        if not one <= two:
            pts.append(v)
        i += 1
    pts.append(P[-1])
    return np.array(pts)


def _descend(m: OddMetric, P: np.ndarray, tol: float, max_sweeps: int = 4000) -> np.ndarray:
    """Red-black descent: each interior vertex moves toward the midpoint of its
    neighbors or by a coordinate step, whichever shortens it most; the step is
    halved when a sweep stops paying off."""
    if len(P) <= 2:
        return P
    lo = np.array([b[0] for b in m.box])
    hi = np.array([b[1] for b in m.box])
    n = m.dim
    P = P.copy()
    scale = float(np.max(hi - lo))
    total = float(segment_lengths(m, P[:-1], P[1:]).sum())
    step = 0.25 * float(np.median(np.linalg.norm(np.diff(P, axis=0), axis=1)))
    for _ in range(max_sweeps):
        if step <= STEP_FLOOR * scale:
            break
        gained = 0.0
        for parity in (1, 2):
            idx = np.arange(parity, len(P) - 1, 2)
            if not idx.size:
                continue
            prev, cur, nxt = P[idx - 1], P[idx], P[idx + 1]
            mid = 0.5 * (prev + nxt)
            cands = [cur] + [cur + a * (mid - cur) for a in (1.0, 0.5, 0.25)]
            for k in range(n):
                for s in (step, -step):
                    c = cur.copy()
                    c[:, k] += s
                    cands.append(c)
            C = np.clip(np.stack(cands), lo, hi)  # (K, M, n); C[0] is the current position
            K, M = C.shape[:2]
            L = (segment_lengths(m, np.broadcast_to(prev, C.shape).reshape(-1, n),
                                 C.reshape(-1, n)) +
                 segment_lengths(m, C.reshape(-1, n),
                                 np.broadcast_to(nxt, C.shape).reshape(-1, n))).reshape(K, M)
            pick = np.argmin(L, axis=0)
            gained += float(np.sum(L[0] - L[pick, np.arange(M)]))
            P[idx] = C[pick, np.arange(M)]
        total -= gained
        if gained <= SWEEP_GAIN * tol * max(total, 1e-300):
            step *= 0.5
    return P


def _refine(m: OddMetric, P: np.ndarray, tol: float, budget: int) -> np.ndarray:
    """String pulling, descent, then midpoint doubling until a level gains less than ``tol``."""
    P = _descend(m, _string_pull(m, P), tol)
    total = float(segment_lengths(m, P[:-1], P[1:]).sum())
    while 2 * len(P) - 1 <= budget:
        Q = np.empty((2 * len(P) - 1, m.dim))
        Q[0::2], Q[1::2] = P, 0.5 * (P[:-1] + P[1:])
        Q = _descend(m, Q, tol)
        new = float(segment_lengths(m, Q[:-1], Q[1:]).sum())
        if not new <= total:
            break
        gain = total - new
        P, total = Q, new
        if gain <= tol * total:
            break
    return P


# ---------------------------------------------------------------------------
# estimates


def _levels(resolution: int) -> list[int]:
    out = [resolution]
    while out[-1] // 2 >= MIN_RESOLUTION and out[-1] % 2 == 0:
        out.append(out[-1] // 2)
    return out[::-1]


def _check_inside(m: OddMetric, *points):
    for p in points:
        if not m.in_box(p):
            raise UnreachableWithinBox(f"point {list(p)} lies outside the domain box {m.box}")


@lru_cache(maxsize=4096)
def _level_estimate(m: OddMetric, p: tuple, q: tuple, resolution: int, tol: float,
                    budget: int):
    """Refined witness from one grid level, with its exact length."""
    path = _shortest_paths(m, resolution, p, [q])[0]
    if path is None:
        return math.inf, None
    P = _refine(m, path, tol, budget)
    curve = PiecewiseCurve.polyline(P)
    return length(m, curve), curve


def distance_estimate(m: OddMetric, query: DistanceQuery) -> DistanceResult:
    """Upper estimate of the distance between ``query.p`` and ``query.q``.

    The result is the shortest refined witness over the grid levels
    ``resolution, resolution/2, ...`` (down to 8), so refining the grid never
    increases the estimate.  The value is the length of the returned witness.
    The computation is orientation-symmetrized: ``d(p, q)`` and ``d(q, p)``
    are the same number.
    """
    p, q = query.p, query.q
    if len(p) != m.dim or len(q) != m.dim:
        raise ValueError(f"points need {m.dim} coordinates")
    _check_inside(m, p, q)
    flip = q < p
    a, b = (q, p) if flip else (p, q)
    if a == b:
        return DistanceResult(0.0, PiecewiseCurve.polyline([a, b]), query.resolution)
    best = (math.inf, None, query.resolution)
    for res in _levels(query.resolution):
        val, curve = _level_estimate(m, a, b, res, query.tol, query.budget)
        if val < best[0]:
            best = (val, curve, res)
    if best[1] is None:
        raise UnreachableWithinBox(f"no finite-length grid path joins {list(p)} and {list(q)}")
    value, curve, res = best
    if flip:
        curve = PiecewiseCurve.polyline(_vertices(curve)[::-1])
    return DistanceResult(value, curve, res)


def _vertices(curve: PiecewiseCurve) -> np.ndarray:
    return np.array([curve.position([s.a])[0] for s in curve.segments] +
                    [curve.position([curve.b])[0]])


def distance(m: OddMetric, p, q, resolution: int = 32, tol: float = 1e-4) -> float:
    return distance_estimate(m, DistanceQuery(tuple(p), tuple(q), resolution, tol=tol)).value


# ---------------------------------------------------------------------------
# checks


@dataclass
class CheckRecord:
    check: str
    points: list
    value: float
    bound: float
    passed: bool

    def to_dict(self):
        return {"check": self.check, "points": self.points, "value": self.value,
                "bound": self.bound, "pass": self.passed}


@dataclass
class CheckReport:
    passed: bool
    records: list[CheckRecord] = field(default_factory=list)

    @property
    def violations(self) -> list[CheckRecord]:
        return [r for r in self.records if not r.passed]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in self.records)

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_jsonl())


POSITIVITY_FLOOR = 1e-9


def _sample(m: OddMetric, count: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    lo = np.array([b[0] for b in m.box])
    hi = np.array([b[1] for b in m.box])
    return lo + (hi - lo) * rng.random((count, m.dim))


def metric_space_check(m: OddMetric, points=None, seed: int = 0, count: int = 10,
                       resolution: int = 16, tol: float = 1e-3) -> CheckReport:
    """Symmetry, positivity, identity and the triangle inequality on sampled points.

    The triangle inequality carries a slack of ``3 * tol`` times the larger
    side, since the estimates are upper bounds converged to relative
    tolerance ``tol``.
    """
    P = _sample(m, count, seed) if points is None else np.atleast_2d(np.asarray(points, float))
    if P.shape[1] != m.dim:
        raise ValueError(f"points need {m.dim} coordinates")
    k = len(P)
    D = np.zeros((k, k))
    recs = []
    for i in range(k):
        for j in range(i + 1, k):
            dij = distance(m, P[i], P[j], resolution, tol)
            dji = distance(m, P[j], P[i], resolution, tol)
            D[i, j], D[j, i] = dij, dji
            pts = [P[i].tolist(), P[j].tolist()]
            recs.append(CheckRecord("symmetry", pts, dij - dji, 0.0, dij == dji))
            if not np.array_equal(P[i], P[j]):
                recs.append(CheckRecord("positivity", pts, dij, POSITIVITY_FLOOR,
                                        dij > POSITIVITY_FLOOR))
    for i in range(k):
        dii = distance(m, P[i], P[i], resolution, tol)
        recs.append(CheckRecord("identity", [P[i].tolist()], dii, 0.0, dii == 0.0))
    for i, j, l in itertools.permutations(range(k), 3):
        if i > l:
            continue
        slack = 3 * tol * max(D[i, j], D[j, l], 1.0)
        ok = D[i, l] <= D[i, j] + D[j, l] + slack
        recs.append(CheckRecord("triangle", [P[i].tolist(), P[j].tolist(), P[l].tolist()],
                                float(D[i, l]), float(D[i, j] + D[j, l] + slack), bool(ok)))
    return CheckReport(all(r.passed for r in recs), recs)


@dataclass
class ComparisonRow:
    radius: float
    C: float
    D: float

    def to_dict(self):
        return {"radius": self.radius, "C": self.C, "D": self.D}


def comparison_lemma_check(m: OddMetric, p, radii: Sequence[float], samples: int = 12,
                           seed: int = 0, resolution: int = 16,
                           tol: float = 1e-3) -> tuple[list[ComparisonRow], CheckReport]:
    """Estimate ``C = max d/|p - q|`` over interior samples and ``D = min d`` over the sphere.

    Sample points are clipped to the box.  Returns the per-radius rows and a
    report asserting ``C`` finite and ``D`` positive.
    """
    p = np.asarray(p, dtype=float)
    _check_inside(m, p)
    lo = np.array([b[0] for b in m.box])
    hi = np.array([b[1] for b in m.box])
    rng = np.random.default_rng(seed)
    rows, recs = [], []
    for r in radii:
        dirs = rng.normal(size=(samples, m.dim))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        if m.dim == 1:
            dirs = np.array([[1.0], [-1.0]] * max(1, samples // 2))
        inner = np.clip(p + dirs * (r * rng.random((len(dirs), 1)) ** (1 / m.dim)), lo, hi)
        outer = np.clip(p + r * dirs, lo, hi)
        ratios, bounds = [], []
        for q in inner:
            e = float(np.linalg.norm(q - p))
            if e > 0:
                ratios.append(distance(m, p, q, resolution, tol) / e)
        for q in outer:
            if np.linalg.norm(q - p) >= 0.999 * r:
                bounds.append(distance(m, p, q, resolution, tol))
        C = float(max(ratios)) if ratios else math.nan
        D = float(min(bounds)) if bounds else math.nan
        rows.append(ComparisonRow(float(r), C, D))
        recs.append(CheckRecord("comparison_upper", [p.tolist()], C, math.inf,
                                bool(np.isfinite(C))))
        recs.append(CheckRecord("comparison_lower", [p.tolist()], D, 0.0, bool(D > 0)))
    return rows, CheckReport(all(r.passed for r in recs), recs)
