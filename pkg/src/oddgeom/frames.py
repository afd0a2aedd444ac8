"""Orthonormal frames, musical isomorphisms and the volume form."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Sequence

import numpy as np
from scipy.integrate import cubature

from . import expr as E
from .compiled import Program
from .errors import DegenerateFrame, FrameMismatch, QuadratureFailure
from .metric import OddMetric

COORD = "coord"
FRAME = "frame"


def _s(e: E.Expr) -> E.Expr:
    return E.simplify(e)


def _sum(terms: Sequence[E.Expr]) -> E.Expr:
    out = E.ZERO
    for t in terms:
        out = t if out == E.ZERO else E.Add(out, t)
    return out


def inner_expr(m: OddMetric, u: Sequence[E.Expr], v: Sequence[E.Expr]) -> E.Expr:
    """``g(u, v)`` for coordinate component vectors, simplified."""
    terms = []
    for a in range(m.dim):
        for b in range(m.dim):
            gab = m.g(a, b)
            if gab == E.ZERO or u[a] == E.ZERO or v[b] == E.ZERO:
                continue
            terms.append(E.Mul(E.Mul(u[a], gab), v[b]))
    return _s(_sum(terms))


# ---------------------------------------------------------------------------
# fields


@dataclass(frozen=True)
class VectorField:
    """Components of a vector field in the coordinate frame or an orthonormal frame."""

    components: tuple[E.Expr, ...]
    basis: str = COORD
    frame: "Frame | None" = None

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(E.as_expr(c) for c in self.components))
        if self.basis not in (COORD, FRAME):
            raise ValueError(f"unknown basis {self.basis!r}")
        if self.basis == FRAME and self.frame is None:
            raise ValueError("frame components need the frame")

    @property
    def dim(self) -> int:
        return len(self.components)

    def to_coords(self) -> "VectorField":
        """Coordinate components ``X^j E_j^i``."""
        if self.basis == COORD:
            return self
        F = self.frame.E
        comps = [_s(_sum([E.Mul(self.components[j], F[j][i]) for j in range(self.dim)
                          if self.components[j] != E.ZERO and F[j][i] != E.ZERO]))
                 for i in range(self.dim)]
        return VectorField(tuple(comps))

    def _check(self, other: "VectorField"):
        if self.basis != other.basis or (self.basis == FRAME and self.frame is not other.frame):
            raise FrameMismatch(f"cannot combine {self.basis} and {other.basis} components")

    def __add__(self, other: "VectorField") -> "VectorField":
        self._check(other)
        return VectorField(tuple(_s(E.Add(a, b)) for a, b in zip(self.components, other.components)),
                           self.basis, self.frame)

    def scale(self, f) -> "VectorField":
        f = E.as_expr(f)
        return VectorField(tuple(_s(E.Mul(f, c)) for c in self.components), self.basis, self.frame)

    @cached_property
    def program(self) -> Program:
        return Program.build(self.to_coords().components, self.dim)

    def __call__(self, X):
        """Coordinate components at the rows of ``X`` (NaN where not finite)."""
        return self.program(X)


@dataclass(frozen=True)
class CoVector:
    components: tuple[E.Expr, ...]
    basis: str = COORD

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(E.as_expr(c) for c in self.components))

    @property
    def dim(self) -> int:
        return len(self.components)


# ---------------------------------------------------------------------------
# linear algebra on expression matrices


def _det(M) -> E.Expr:
    n = len(M)
    if n == 1:
        return M[0][0]
    if n == 2:
        return _s(E.Sub(E.Mul(M[0][0], M[1][1]), E.Mul(M[0][1], M[1][0])))
    terms = []
    for j in range(n):
        if M[0][j] == E.ZERO:
            continue
        minor = [[M[r][c] for c in range(n) if c != j] for r in range(1, n)]
        t = E.Mul(M[0][j], _det(minor))
        terms.append(E.Neg(t) if j % 2 else t)
    return _s(_sum(terms)) if terms else E.ZERO


def _inverse(M):
    n = len(M)
    d = _det(M)
    if d == E.ZERO:
        raise DegenerateFrame("matrix determinant simplifies to zero")
    if n == 1:
        return [[_s(E.Div(E.ONE, d))]]
    inv = [[None] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            minor = [[M[r][c] for c in range(n) if c != i] for r in range(n) if r != j]
            cof = _det(minor)
            if (i + j) % 2:
                cof = E.Neg(cof)
            inv[i][j] = _s(E.Div(cof, d))
    return inv


@lru_cache(maxsize=64)
def metric_determinant(m: OddMetric) -> E.Expr:
    return _det(m.matrix)


@lru_cache(maxsize=64)
def inverse_metric(m: OddMetric) -> tuple[tuple[E.Expr, ...], ...]:
    """Entries ``g^{ij}`` (meromorphic, poles on the strata)."""
    inv = _inverse(m.matrix)
    # symmetrize storage
    return tuple(tuple(inv[min(i, j)][max(i, j)] for j in range(m.dim)) for i in range(m.dim))


# ---------------------------------------------------------------------------
# frames


@dataclass(frozen=True, eq=False)
class Frame:
    """Rows ``E[i]`` hold the coordinate components ``E_i^j`` of frame field ``E_i``."""

    E: tuple[tuple[E.Expr, ...], ...]
    metric: OddMetric
    provenance: str = "gram-schmidt(coordinate)"

    @property
    def dim(self) -> int:
        return len(self.E)

    def field(self, i: int) -> VectorField:
        return VectorField(self.E[i])

    def frame_field(self, coeffs: Sequence) -> VectorField:
        return VectorField(tuple(E.as_expr(c) for c in coeffs), FRAME, self)

    @cached_property
    def program(self) -> Program:
        return Program.build([c for row in self.E for c in row], self.dim)

    def eval(self, X):
        """Frame matrices of shape (N, n, n) and a finiteness mask."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        vals, tags, _ = self.program.run(X)
        n = self.dim
        return vals.reshape(-1, n, n), np.all(tags == 0, axis=1)

    @cached_property
    def coframe(self) -> tuple[tuple[E.Expr, ...], ...]:
        """Dual coframe ``eps^k_b`` with ``eps^k(E_j) = delta``; inverse of the transposed frame matrix."""
        n = self.dim
        Ft = [[self.E[j][i] for j in range(n)] for i in range(n)]
        return tuple(tuple(r) for r in _inverse(Ft))

    @cached_property
    def coframe_program(self) -> Program:
        return Program.build([c for row in self.coframe for c in row], self.dim)

    @cached_property
    def denominator(self) -> E.Expr:
        """Common denominator of the frame entries (see :func:`oddgeom.flows.clearing_factor`)."""
        from .flows import clearing_factor
        return clearing_factor([c for row in self.E for c in row])


def gram_schmidt_frame(m: OddMetric) -> Frame:
    return _gram_schmidt(m)


@lru_cache(maxsize=64)
def _gram_schmidt(m: OddMetric) -> Frame:
    """Classical Gram-Schmidt on the coordinate fields, projecting onto the
    orthogonal vectors produced so far, then normalizing by the metric norm."""
    n = m.dim
    us: list[list[E.Expr]] = []
    norms: list[E.Expr] = []
    for i in range(n):
        u = [E.ONE if k == i else E.ZERO for k in range(n)]
        for uj, nj in zip(us, norms):
            ip = inner_expr(m, [E.ONE if k == i else E.ZERO for k in range(n)], uj)
            if ip == E.ZERO:
                continue
            c = _s(E.Div(ip, nj))
            u = [_s(E.Sub(a, E.Mul(c, b))) for a, b in zip(u, uj)]
        nrm = inner_expr(m, u, u)
        if nrm == E.ZERO:
            raise DegenerateFrame(f"squared norm of vector {i + 1} vanishes identically")
        us.append(u)
        norms.append(nrm)
    rows = []
    for u, nrm in zip(us, norms):
        length = _s(E.Sqrt(nrm))
        rows.append(tuple(_s(E.Div(a, length)) if a != E.ZERO else E.ZERO for a in u))
    return Frame(tuple(rows), m)


def frame_gram(frame: Frame, X) -> np.ndarray:
    """``g(E_i, E_j)`` at the rows of ``X``; shape (N, n, n)."""
    F, _ = frame.eval(X)
    G, _ = frame.metric.eval_matrix(X)
    return np.einsum("nia,nab,njb->nij", F, G, F)


def frame_field_expr(frame: Frame, label: str) -> VectorField:
    """Parse ``E1``, ``E1+E2``, ``2*E1-E2`` style names into frame components."""
    n = frame.dim
    coeffs = [0] * n
    text = label.replace(" ", "")
    if not text:
        raise ValueError("empty field name")
    for sign, term in _split_terms(text):
        c, _, name = term.rpartition("*")
        if not name.startswith("E") or not name[1:].isdigit():
            raise ValueError(f"bad frame field {term!r}")
        k = int(name[1:]) - 1
        if not 0 <= k < n:
            raise ValueError(f"frame index {k + 1} outside dimension {n}")
        coeffs[k] += sign * (float(c) if c and "." in c else int(c or 1))
    return frame.frame_field([E.Const(c) for c in coeffs])


def _split_terms(text: str):
    sign, start = 1, 0
    if text[0] in "+-":
        sign = -1 if text[0] == "-" else 1
        start = 1
    buf = ""
    for ch in text[start:]:
        if ch in "+-":
            yield sign, buf
            sign, buf = (-1 if ch == "-" else 1), ""
        else:
            buf += ch
    yield sign, buf


# ---------------------------------------------------------------------------
# musical isomorphisms and differential operators


def flat(m: OddMetric, X: VectorField) -> CoVector:
    """``omega_j = g_ji X^i``."""
    Xc = X.to_coords().components
    return CoVector(tuple(
        _s(_sum([E.Mul(m.g(j, i), Xc[i]) for i in range(m.dim)
                 if m.g(j, i) != E.ZERO and Xc[i] != E.ZERO]))
        for j in range(m.dim)))


def sharp(m: OddMetric, w: CoVector) -> VectorField:
    """``X^i = g^{ij} omega_j``."""
    if w.basis != COORD:
        raise FrameMismatch("sharp expects coordinate covector components")
    inv = inverse_metric(m)
    return VectorField(tuple(
        _s(_sum([E.Mul(inv[i][j], w.components[j]) for j in range(m.dim)
                 if inv[i][j] != E.ZERO and w.components[j] != E.ZERO]))
        for i in range(m.dim)))


def differential(f: E.Expr, dim: int) -> CoVector:
    return CoVector(tuple(_s(E.differentiate(f, i)) for i in range(dim)))


def gradient(m: OddMetric, f: E.Expr) -> VectorField:
    """Coordinate components ``g^{ij} d_j f``."""
    return sharp(m, differential(f, m.dim))


def gradient_frame(frame: Frame, f: E.Expr) -> VectorField:
    """Gradient in orthonormal-frame components ``E_i(f)``."""
    n = frame.dim
    df = [E.differentiate(f, j) for j in range(n)]
    comps = [_s(_sum([E.Mul(frame.E[i][j], df[j]) for j in range(n)
                      if frame.E[i][j] != E.ZERO and df[j] != E.ZERO])) for i in range(n)]
    return frame.frame_field(comps)


@lru_cache(maxsize=64)
def volume_form(m: OddMetric) -> E.Expr:
    """Density ``sqrt(det g)`` of the volume form."""
    return _s(E.Sqrt(metric_determinant(m)))


def divergence(m: OddMetric, X: VectorField) -> E.Expr:
    """``(1/sqrt det g) d_i (X^i sqrt det g)``."""
    vol = volume_form(m)
    Xc = X.to_coords().components
    terms = [E.differentiate(_s(E.Mul(Xc[i], vol)), i) for i in range(m.dim) if Xc[i] != E.ZERO]
    return _s(E.Div(_sum(terms), vol)) if terms else E.ZERO


def laplacian(m: OddMetric, f: E.Expr) -> E.Expr:
    return divergence(m, gradient(m, f))


# ---------------------------------------------------------------------------
# volume integration


@dataclass
class VolumeResult:
    value: float
    error: float
    subcells: int

    def __float__(self) -> float:
        return self.value


def integrate_volume(m: OddMetric, box=None, rtol: float = 1e-10, atol: float = 1e-12,
                     max_subdivisions: int = 10000) -> VolumeResult:
    """Adaptive cubature of the volume density over ``box``.

    The box is split along the zero planes of stratum coordinates so that
    the kinks of ``|x|``-type densities sit on cell boundaries.
    """
    box = m.box if box is None else tuple((float(a), float(b)) for a, b in box)
    for (lo, hi), (blo, bhi) in zip(box, m.box):
        if lo < blo - 1e-12 or hi > bhi + 1e-12 or not lo < hi:
            raise ValueError(f"integration box {box} is not inside the domain {m.box}")
    prog = Program.build([volume_form(m)], m.dim)

    def density(X):
        v = prog(X)[:, 0]
        if np.any(~np.isfinite(v)):
            raise QuadratureFailure("volume density is not finite inside the box")
        return v

    cuts = []
    split_axes = {i for s in m.strata for i in s.vanishing}
    for i, (lo, hi) in enumerate(box):
        pts = [lo, hi]
        if i in split_axes and lo < 0.0 < hi:
            pts = [lo, 0.0, hi]
        cuts.append(list(zip(pts[:-1], pts[1:])))
    total, err, cells = 0.0, 0.0, 0
    for cell in itertools.product(*cuts):
        a = np.array([c[0] for c in cell])
        b = np.array([c[1] for c in cell])
        res = cubature(density, a, b, rtol=rtol, atol=atol, max_subdivisions=max_subdivisions)
        if res.status != "converged":
            raise QuadratureFailure(f"cubature did not converge on cell {cell} (error {res.error:.3g})")
        total += float(res.estimate)
        err += float(res.error)
        cells += 1
    return VolumeResult(total, err, cells)
