"""Named example metrics with fields, curves and expected values.

Every expectation records its value, tolerance and provenance, plus a function
that recomputes it, so the test suite checks all of them generically.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable

import numpy as np

from . import expr as E
from .errors import UnknownFixture
from .metric import OddMetric, degenerate_rank, format_metric_text, restrict

PAPER, DERIVED, TRIVIAL = "PAPER", "DERIVED", "TRIVIAL"


@dataclass(frozen=True)
class Expectation:
    key: str
    value: float
    tol: float
    provenance: str
    compute: Callable[["Fixture"], float] = field(repr=False, compare=False)

    def check(self, fx: "Fixture") -> tuple[bool, float]:
        got = float(self.compute(fx))
        return abs(got - self.value) <= self.tol, got


@dataclass
class Fixture:
    name: str
    metric: OddMetric
    fields: dict[str, str] = field(default_factory=dict)  # field specs for frame_field_expr
    curves: dict[str, tuple] = field(default_factory=dict)  # (a, b, coordinate strings)
    expectations: tuple[Expectation, ...] = ()

    def field(self, name: str):
        from .frames import frame_field_expr, gram_schmidt_frame

        return frame_field_expr(gram_schmidt_frame(self.metric), self.fields.get(name, name))

    def curve(self, name: str):
        from .curves import PiecewiseCurve

        a, b, coords = self.curves[name]
        return PiecewiseCurve.from_exprs(a, b, list(coords))


# ---------------------------------------------------------------------------
# expectation helpers


def _christoffel_at(k, i, j, p):
    def f(fx):
        from .connection import christoffel

        G, _ = christoffel(fx.metric).eval(np.atleast_2d(p))
        return G[0, k, i, j]
    return f


def _max_christoffel(p):
    def f(fx):
        from .connection import christoffel

        G, _ = christoffel(fx.metric).eval(np.atleast_2d(p))
        return float(np.max(np.abs(G)))
    return f


def _nabla_at(x_name, y_name, p):
    """First coordinate component of the covariant derivative of named fields."""
    def f(fx):
        from .connection import covariant_derivative
        from .frames import VectorField

        def vf(name):
            if name == "d1":
                return VectorField((E.ONE,) + (E.ZERO,) * (fx.metric.dim - 1))
            return fx.field(name)

        V = covariant_derivative(fx.metric, vf(x_name), vf(y_name))
        return V.program.at(p)[0]
    return f


def _speed_at(curve, t):
    def f(fx):
        from .curves import speed

        return speed(fx.metric, fx.curve(curve), t)
    return f


def _volume(box):
    def f(fx):
        from .frames import integrate_volume

        return integrate_volume(fx.metric, box).value
    return f


def _distance(p, q, tol=1e-4):
    def f(fx):
        from .distance import distance

        return distance(fx.metric, p, q, tol=tol)
    return f


def _rank_at(p):
    return lambda fx: degenerate_rank(fx.metric, p)


def _restricted_rank(stratum, p):
    return lambda fx: degenerate_rank(restrict(fx.metric, stratum), p)


def _validates(fx):
    from .metric import validate

    return 1.0 if validate(fx.metric).passed else 0.0


def _min_det(fx):
    from .metric import validate

    return validate(fx.metric).off_locus_min_det


def _slope(field_name, target):
    """Slope of the radial line at the origin closest to ``target``."""
    def f(fx):
        from .flows import lines, radial_directions

        ls = lines(radial_directions(fx.metric, fx.field(field_name), np.zeros(fx.metric.dim)))
        slopes = [d[1] / d[0] if abs(d[0]) > 1e-15 else math.inf for d in ls]
        return min(slopes, key=lambda s: abs(s - target))
    return f


def _line_count(field_name):
    def f(fx):
        from .flows import lines, radial_directions

        return len(lines(radial_directions(fx.metric, fx.field(field_name),
                                           np.zeros(fx.metric.dim))))
    return f


# roots quoted to four decimals in the source figures
SLOPE_E2 = -1.8393
SLOPE_E12 = (1.0, -3.3830)


# ---------------------------------------------------------------------------
# registry


def _euclid(n: int) -> Fixture:
    m = OddMetric.euclidean(n, name=f"euclid_{n}")
    p = [0.25] * n
    return Fixture(m.name, m, {}, {}, (
        Expectation("validates", 1.0, 0.0, TRIVIAL, _validates),
        Expectation("off_locus_min_det", 1.0, 1e-12, TRIVIAL, _min_det),
        Expectation("christoffel_zero", 0.0, 0.0, TRIVIAL, _max_christoffel(p)),
    ))


def _line_x2() -> Fixture:
    m = OddMetric.from_matrix([["x^2"]], ["x"], strata=[(0,)], box=[(-2, 2)], name="line_x2")
    fields = {"E": "E1"}
    curves = {"gamma_sqrt": (-1.0, 1.0, ("t/abs(t)*sqrt(abs(t))",))}
    return Fixture(m.name, m, fields, curves, (
        Expectation("validates", 1.0, 0.0, TRIVIAL, _validates),
        Expectation("christoffel_111_at_0.5", 2.0, 1e-12, PAPER, _christoffel_at(0, 0, 0, [0.5])),
        Expectation("nabla_dx_dx_at_0.5", 2.0, 1e-10, PAPER, _nabla_at("d1", "d1", [0.5])),
        Expectation("nabla_E_dx_at_0.5", 4.0, 1e-10, PAPER, _nabla_at("E", "d1", [0.5])),
        Expectation("nabla_dx_E_at_0.5", 0.0, 1e-10, PAPER, _nabla_at("d1", "E", [0.5])),
        Expectation("nabla_E_E_at_0.5", 0.0, 1e-10, PAPER, _nabla_at("E", "E", [0.5])),
        Expectation("speed_gamma_sqrt_at_0.3", 0.5, 1e-10, PAPER, _speed_at("gamma_sqrt", 0.3)),
        Expectation("speed_gamma_sqrt_at_-0.7", 0.5, 1e-10, PAPER, _speed_at("gamma_sqrt", -0.7)),
        Expectation("volume_-1_1", 1.0, 1e-8, DERIVED, _volume([(-1.0, 1.0)])),
        Expectation("distance_0_1", 0.5, 1e-4, DERIVED, _distance((0.0,), (1.0,))),
        Expectation("distance_-1_1", 1.0, 1e-4, DERIVED, _distance((-1.0,), (1.0,))),
    ))


def _r3(name: str, g11: str) -> Fixture:
    m = OddMetric.from_matrix([[g11, "0", "0"], ["0", "1", "0"],
                               ["0", "0", "(x^2+z^2)*(y^2+z^2)"]],
                              ["x", "y", "z"], strata=[(0, 2), (1, 2)],
                              box=[(-1, 1)] * 3, name=name)
    exps = [
        Expectation("validates", 1.0, 0.0, TRIVIAL, _validates),
        Expectation("rank_generic", 0.0, 0.0, TRIVIAL, _rank_at([0.5, 0.5, 0.5])),
    ]
    if name == "r3_g":
        exps += [
            Expectation("rank_on_y_axis", 1.0, 0.0, PAPER, _rank_at([0.0, 0.5, 0.0])),
            Expectation("rank_on_x_axis", 1.0, 0.0, PAPER, _rank_at([0.5, 0.0, 0.0])),
            Expectation("x_axis_rank_at_origin", 0.0, 0.0, PAPER, _restricted_rank((1, 2), [0.0])),
            Expectation("y_axis_rank_at_origin", 0.0, 0.0, PAPER, _restricted_rank((0, 2), [0.0])),
        ]
    else:
        exps += [
            Expectation("rank_on_y_axis", 2.0, 0.0, PAPER, _rank_at([0.0, 0.5, 0.0])),
            Expectation("rank_on_x_axis", 1.0, 0.0, PAPER, _rank_at([0.5, 0.0, 0.0])),
            Expectation("x_axis_rank_at_origin", 1.0, 0.0, PAPER, _restricted_rank((1, 2), [0.0])),
            Expectation("y_axis_rank_at_origin", 0.0, 0.0, PAPER, _restricted_rank((0, 2), [0.0])),
        ]
    return Fixture(name, m, {}, {}, tuple(exps))


def _r2_cross() -> Fixture:
    m = OddMetric.from_matrix([["x^2+y^2", "y^2-x^2"], ["y^2-x^2", "x^2+y^2"]], ["x", "y"],
                              strata=[(0,), (1,)], box=[(-5, 5), (-5, 5)], name="r2_cross")
    fields = {"E1": "E1", "E2": "E2", "E1+E2": "E1+E2"}
    return Fixture(m.name, m, fields, {}, (
        Expectation("validates", 1.0, 0.0, TRIVIAL, _validates),
        Expectation("E2_line_count", 1.0, 0.0, PAPER, _line_count("E2")),
        Expectation("E2_slope", SLOPE_E2, 1e-3, PAPER, _slope("E2", SLOPE_E2)),
        Expectation("E1+E2_line_count", 2.0, 0.0, PAPER, _line_count("E1+E2")),
        Expectation("E1+E2_slope_1", SLOPE_E12[0], 1e-3, PAPER, _slope("E1+E2", SLOPE_E12[0])),
        Expectation("E1+E2_slope_2", SLOPE_E12[1], 1e-3, PAPER, _slope("E1+E2", SLOPE_E12[1])),
    ))


NAMES = ("euclid_n", "line_x2", "r3_g", "r3_h", "r2_cross")
EMITTED = ("euclid_2", "euclid_3", "line_x2", "r3_g", "r3_h", "r2_cross")
_EUCLID = re.compile(r"^euclid_(\d+)$")


@lru_cache(maxsize=None)
def get_fixture(name: str) -> Fixture:
    """Fixture by name; ``euclid_n`` is the 3-dimensional case, ``euclid_<k>`` any dimension."""
    if name == "euclid_n":
        return _euclid(3)
    if (mk := _EUCLID.match(name)) and int(mk.group(1)) >= 1:
        return _euclid(int(mk.group(1)))
    if name == "line_x2":
        return _line_x2()
    if name == "r3_g":
        return _r3("r3_g", "1")
    if name == "r3_h":
        return _r3("r3_h", "x^2+z^2")
    if name == "r2_cross":
        return _r2_cross()
    raise UnknownFixture(f"unknown fixture {name!r}; known: {', '.join(NAMES)} (euclid_<k>)")


def fixture_text(name: str) -> str:
    return format_metric_text(get_fixture(name).metric)


def write_fixture_files(directory) -> list[Path]:
    """Write ``<name>.odd`` for the shipped fixtures; output is byte-stable."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    out = []
    for name in EMITTED:
        path = directory / f"{name}.odd"
        path.write_bytes(fixture_text(name).encode("utf-8"))
        out.append(path)
    return out
