"""ODD metrics on a coordinate box with declared degeneracy strata."""
from __future__ import annotations

import itertools
import re
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import qmc

from . import expr as E
from .compiled import Program
from .errors import EvaluationFailure, MetricFormatError

DEFAULT_TOL = 1e-9


@dataclass(frozen=True, order=True)
class Stratum:
    """Coordinate subspace ``{x_i = 0 : i in vanishing}`` (0-based indices)."""

    vanishing: tuple[int, ...]

    def __init__(self, vanishing):
        idx = tuple(sorted(set(int(i) for i in vanishing)))
        if not idx:
            raise ValueError("a stratum needs at least one vanishing coordinate")
        if idx[0] < 0:
            raise ValueError(f"negative coordinate index in {idx}")
        object.__setattr__(self, "vanishing", idx)

    def distance(self, X) -> np.ndarray:
        """Euclidean distance of each row of ``X`` to the subspace."""
        X = np.atleast_2d(X)
        return np.sqrt(np.sum(X[:, list(self.vanishing)] ** 2, axis=1))

    def contains(self, p, tol: float = 0.0) -> bool:
        return bool(self.distance(np.asarray(p, dtype=float))[0] <= tol)

    def label(self, coords: Sequence[str] | None = None) -> str:
        if coords is None:
            return ",".join(str(i + 1) for i in self.vanishing)
        return " = ".join(coords[i] for i in self.vanishing) + " = 0"


@dataclass(frozen=True, eq=False)
class OddMetric:
    """Symmetric matrix of expressions on a box, with declared strata.

    Only the upper triangle is stored; ``g(i, j)`` and ``g(j, i)`` return the
    same object, so evaluated matrices are exactly symmetric.
    """

    dim: int
    coords: tuple[str, ...]
    upper: tuple[E.Expr, ...]
    strata: tuple[Stratum, ...] = ()
    box: tuple[tuple[float, float], ...] = ()
    name: str = field(default="", compare=False)

    def __post_init__(self):
        n = self.dim
        if n < 1:
            raise MetricFormatError("dimension must be positive")
        if len(self.coords) != n or len(set(self.coords)) != n:
            raise MetricFormatError(f"need {n} distinct coordinate names, got {self.coords}")
        if len(self.upper) != n * (n + 1) // 2:
            raise MetricFormatError("wrong number of metric entries")
        for e in self.upper:
            if E.max_var_index(e) >= n:
                raise MetricFormatError(f"entry {e} uses a coordinate beyond dimension {n}")
        if len(set(self.strata)) != len(self.strata):
            raise MetricFormatError("duplicate strata")
        for s in self.strata:
            if s.vanishing[-1] >= n:
                raise MetricFormatError(f"stratum {s.vanishing} outside dimension {n}")
        box = self.box or tuple((-1.0, 1.0) for _ in range(n))
        box = tuple((float(lo), float(hi)) for lo, hi in box)
        if len(box) != n or any(not lo < hi for lo, hi in box):
            raise MetricFormatError(f"bad domain box {box}")
        object.__setattr__(self, "box", box)
        object.__setattr__(self, "strata", tuple(sorted(self.strata)))

    @classmethod
    def from_matrix(cls, g, coords=None, strata=(), box=(), name="") -> "OddMetric":
        """Build from a full matrix (strings or Exprs); the upper triangle is used."""
        n = len(g)
        coords = tuple(coords or E.default_coord_names(n))
        upper = []
        for i in range(n):
            for j in range(i, n):
                v = g[i][j]
                upper.append(E.parse(v, coords) if isinstance(v, str) else E.as_expr(v))
        strata = tuple(s if isinstance(s, Stratum) else Stratum(s) for s in strata)
        return cls(n, coords, tuple(upper), strata, tuple(box), name)

    @classmethod
    def euclidean(cls, n: int, box=None, name="") -> "OddMetric":
        g = [[E.ONE if i == j else E.ZERO for j in range(n)] for i in range(n)]
        return cls.from_matrix(g, box=box or (), name=name or f"euclid_{n}")

    def _index(self, i: int, j: int) -> int:
        if i > j:
            i, j = j, i
        n = self.dim
        return i * n - i * (i - 1) // 2 + (j - i)

    def g(self, i: int, j: int) -> E.Expr:
        return self.upper[self._index(i, j)]

    @property
    def matrix(self) -> list[list[E.Expr]]:
        return [[self.g(i, j) for j in range(self.dim)] for i in range(self.dim)]

    @cached_property
    def program(self) -> Program:
        return Program.build(self.upper, self.dim)

    def eval_matrix(self, X, guard: float = E.DEFAULT_POLE_GUARD):
        """Metric matrices at the rows of ``X``: ``(G, ok)`` with ``G`` of shape (N, n, n)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        vals, tags, _ = self.program.run(X, guard)
        n = self.dim
        G = np.empty((X.shape[0], n, n))
        k = 0
        for i in range(n):
            for j in range(i, n):
                G[:, i, j] = vals[:, k]
                G[:, j, i] = vals[:, k]
                k += 1
        return G, np.all(tags == 0, axis=1)

    def at(self, p) -> np.ndarray:
        G, ok = self.eval_matrix(np.asarray(p, dtype=float)[None, :])
        if not ok[0]:
            raise EvaluationFailure(f"metric not finite at {list(p)}")
        return G[0]

    def inner(self, p, u, v) -> float:
        return float(np.asarray(u) @ self.at(p) @ np.asarray(v))

    def stratum_distance(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        if not self.strata:
            return np.full(X.shape[0], np.inf)
        return np.min([s.distance(X) for s in self.strata], axis=0)

    def with_strata(self, strata) -> "OddMetric":
        strata = tuple(s if isinstance(s, Stratum) else Stratum(s) for s in strata)
        return OddMetric(self.dim, self.coords, self.upper, strata, self.box, self.name)

    def in_box(self, p, slack: float = 1e-12) -> bool:
        p = np.asarray(p, dtype=float)
        lo = np.array([b[0] for b in self.box])
        hi = np.array([b[1] for b in self.box])
        return bool(np.all(p >= lo - slack) and np.all(p <= hi + slack))

    def __eq__(self, other) -> bool:
        if not isinstance(other, OddMetric):
            return NotImplemented
        return (self.dim, self.coords, self.upper, self.strata, self.box) == \
            (other.dim, other.coords, other.upper, other.strata, other.box)

    def __hash__(self) -> int:
        return hash((self.dim, self.coords, self.upper, self.strata, self.box))


# ---------------------------------------------------------------------------
# restriction and rank


def restrict(m: OddMetric, s: Stratum | Sequence[int]) -> OddMetric:
    """Induced metric on the stratum ``s`` (rows/columns of ``s`` deleted, coordinates set to 0)."""
    s = s if isinstance(s, Stratum) else Stratum(s)
    if s not in m.strata:
        raise ValueError(f"stratum {s.vanishing} is not declared on this metric")
    return _restrict(m, s)


def _restrict(m: OddMetric, s: Stratum) -> OddMetric:
    keep = [i for i in range(m.dim) if i not in s.vanishing]
    if not keep:
        raise ValueError("restriction to a point has no metric")
    new_index = {old: new for new, old in enumerate(keep)}
    subs = {i: E.ZERO for i in s.vanishing}
    subs.update({old: E.Var(new) for old, new in new_index.items()})
    g = [[E.simplify(E.substitute(m.g(i, j), subs)) for j in keep] for i in keep]
    strata = set()
    for t in m.strata:
        if t == s:
            continue
        rest = [new_index[i] for i in t.vanishing if i not in s.vanishing]
        if rest:
            strata.add(Stratum(rest))
    name = f"{m.name}|{s.label()}" if m.name else ""
    return OddMetric.from_matrix(g, [m.coords[i] for i in keep], sorted(strata),
                                 [m.box[i] for i in keep], name)


def degenerate_rank(m: OddMetric, p, tol: float = DEFAULT_TOL) -> int:
    """Number of eigenvalues of the metric matrix at ``p`` below ``tol``."""
    if not m.in_box(p):
        raise ValueError(f"point {list(p)} outside the domain box")
    return int(np.sum(np.linalg.eigvalsh(m.at(p)) < tol))


def probe_point(m: OddMetric, s: Stratum) -> np.ndarray:
    """A generic point on ``s``: free coordinates at 3/4 of their box range."""
    p = np.array([lo + 0.75 * (hi - lo) for lo, hi in m.box])
    p[list(s.vanishing)] = 0.0
    return p


# ---------------------------------------------------------------------------
# validation


@dataclass
class ValidationReport:
    verdict: str
    reason: str
    psd_min_eigenvalue: float
    off_locus_min_det: float
    n_samples: int
    n_off_locus: int
    degenerate_ranks: dict[tuple[int, ...], int] = field(default_factory=dict)
    substrata: dict[tuple[int, ...], "ValidationReport"] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.verdict == "Pass"

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "reason": self.reason,
            "psd_min_eigenvalue": self.psd_min_eigenvalue,
            "off_locus_min_det": self.off_locus_min_det,
            "n_samples": self.n_samples,
            "n_off_locus": self.n_off_locus,
            "degenerate_ranks": {",".join(str(i + 1) for i in k): v
                                 for k, v in self.degenerate_ranks.items()},
            "substrata": {",".join(str(i + 1) for i in k): v.to_dict()
                          for k, v in self.substrata.items()},
        }


def sample_points(m: OddMetric, samples: int, rng_seed: int) -> np.ndarray:
    """Scrambled Sobol points in the box, plus copies projected onto the
    coordinate subspaces through 0 so that undeclared degeneracy is hit."""
    lo = np.array([b[0] for b in m.box])
    hi = np.array([b[1] for b in m.box])
    sobol = qmc.Sobol(d=m.dim, scramble=True, seed=rng_seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        U = sobol.random(samples)
    X = lo + U * (hi - lo)
    base = X[: min(samples, 32)]
    through_zero = [i for i in range(m.dim) if lo[i] <= 0.0 <= hi[i]]
    extra = []
    for r in range(1, len(through_zero)):
        for subset in itertools.combinations(through_zero, r):
            P = base.copy()
            P[:, list(subset)] = 0.0
            extra.append(P)
    return np.vstack([X] + extra) if extra else X


def exclusion_radius(dim: int, tol: float) -> float:
    return tol ** (1.0 / (2 * dim))


def validate(m: OddMetric, samples: int = 256, tol: float = DEFAULT_TOL,
             rng_seed: int = 0) -> ValidationReport:
    """Check positive semidefiniteness, nondegeneracy off the strata, and,
    recursively, the induced metrics on the strata."""
    if samples < 1:
        raise ValueError("samples must be at least 1")
    if tol <= 0:
        raise ValueError("tol must be positive")
    X = sample_points(m, samples, rng_seed)
    G, ok = m.eval_matrix(X)
    dist = m.stratum_distance(X)
    # det may vanish to order 2n on a stratum, so the exclusion radius scales with n
    off = dist > exclusion_radius(m.dim, tol)
    bad = off & ~ok
    if np.any(bad):
        p = X[np.argmax(bad)]
        raise EvaluationFailure(f"metric is not finite at {p.tolist()}")
    Gok = G[ok]
    min_eig = float(np.min(np.linalg.eigvalsh(Gok)[:, 0])) if len(Gok) else float("nan")
    dets = np.linalg.det(G[off & ok])
    min_det = float(np.min(dets)) if len(dets) else float("inf")

    reasons = []
    if min_eig < -tol:
        reasons.append(f"not positive semidefinite (min eigenvalue {min_eig:.3g})")
    if min_det <= tol:
        p = X[off & ok][np.argmin(dets)]
        reasons.append(f"degenerate off the declared strata at {np.round(p, 6).tolist()}")

    ranks, subs = {}, {}
    for s in m.strata:
        p = probe_point(m, s)
        finite = not m.program.run(p[None])[1].any()
        ranks[s.vanishing] = degenerate_rank(m, p, tol) if finite else -1
        if len(s.vanishing) < m.dim:
            sub = validate(_restrict(m, s), samples, tol, rng_seed)
            subs[s.vanishing] = sub
            if not sub.passed:
                reasons.append(f"restriction to {s.label(m.coords)} fails: {sub.reason}")
    return ValidationReport(
        verdict="Pass" if not reasons else "Fail",
        reason="; ".join(reasons),
        psd_min_eigenvalue=min_eig,
        off_locus_min_det=min_det,
        n_samples=len(X),
        n_off_locus=int(np.sum(off)),
        degenerate_ranks=ranks,
        substrata=subs,
    )


def pullback_scaling(m: OddMetric, c: float) -> OddMetric:
    """Pullback of ``m`` under ``x -> c x``: entries ``c^2 g_ij(c x)`` on the scaled box."""
    if c == 0:
        raise ValueError("scale must be nonzero")
    cc = E.Const(c)
    subs = {i: E.Mul(cc, E.Var(i)) for i in range(m.dim)}
    g = [[E.simplify(E.Mul(E.Const(c * c), E.substitute(m.g(i, j), subs)))
          for j in range(m.dim)] for i in range(m.dim)]
    box = [tuple(sorted((lo / c, hi / c))) for lo, hi in m.box]
    return OddMetric.from_matrix(g, m.coords, m.strata, box, f"{m.name}*{c:g}")


# ---------------------------------------------------------------------------
# file format

_G_KEY = re.compile(r"^g\[(\d+)\]\[(\d+)\]$")


def _fmt_number(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def parse_metric_text(text: str, name: str = "") -> OddMetric:
    entries: dict[tuple[int, int], tuple[str, int]] = {}
    dim = coords = box = None
    strata = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise MetricFormatError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "dim":
            try:
                dim = int(value)
            except ValueError:
                raise MetricFormatError(f"line {lineno}: bad dimension {value!r}") from None
        elif key == "coords":
            coords = tuple(c.strip() for c in value.split(","))
        elif key == "stratum":
            try:
                idx = [int(v) - 1 for v in value.split(",")]
            except ValueError:
                raise MetricFormatError(f"line {lineno}: bad stratum {value!r}") from None
            if min(idx) < 0:
                raise MetricFormatError(f"line {lineno}: stratum indices are 1-based")
            strata.append(Stratum(idx))
        elif key == "box":
            try:
                box = [tuple(float(v) for v in part.split("..")) for part in value.split(",")]
            except ValueError:
                raise MetricFormatError(f"line {lineno}: bad box {value!r}") from None
            if any(len(b) != 2 for b in box):
                raise MetricFormatError(f"line {lineno}: box intervals are written lo..hi")
        elif (mg := _G_KEY.match(key)):
            i, j = int(mg.group(1)) - 1, int(mg.group(2)) - 1
            if i > j:
                raise MetricFormatError(f"line {lineno}: only g[i][j] with i <= j is accepted")
            if (i, j) in entries:
                raise MetricFormatError(f"line {lineno}: duplicate entry {key}")
            entries[(i, j)] = (value, lineno)
        else:
            raise MetricFormatError(f"line {lineno}: unknown key {key!r}")
    if dim is None:
        raise MetricFormatError("missing 'dim'")
    coords = coords or tuple(E.default_coord_names(dim))
    if len(coords) != dim:
        raise MetricFormatError(f"'coords' lists {len(coords)} names for dim {dim}")
    g = [[E.ZERO] * dim for _ in range(dim)]
    for (i, j), (value, lineno) in entries.items():
        if j >= dim:
            raise MetricFormatError(f"line {lineno}: index beyond dimension {dim}")
        try:
            g[i][j] = g[j][i] = E.parse(value, coords)
        except E.ExpressionSyntaxError as exc:
            raise MetricFormatError(f"line {lineno}: {exc}") from exc
    if len(set(strata)) != len(strata):
        raise MetricFormatError("duplicate strata")
    return OddMetric.from_matrix(g, coords, strata, box or (), name)


def format_metric_text(m: OddMetric) -> str:
    lines = [f"dim = {m.dim}", f"coords = {', '.join(m.coords)}"]
    for i in range(m.dim):
        for j in range(i, m.dim):
            e = m.g(i, j)
            if e != E.ZERO:
                lines.append(f"g[{i + 1}][{j + 1}] = {E.to_string(e, m.coords)}")
    for s in m.strata:
        lines.append(f"stratum = {s.label()}    # {s.label(m.coords)}")
    lines.append("box = " + ", ".join(f"{_fmt_number(lo)}..{_fmt_number(hi)}" for lo, hi in m.box))
    return "\n".join(lines) + "\n"


def read_metric(path) -> OddMetric:
    path = Path(path)
    return parse_metric_text(path.read_text(encoding="utf-8"), path.stem)


def write_metric(m: OddMetric, path) -> None:
    Path(path).write_text(format_metric_text(m), encoding="utf-8")
