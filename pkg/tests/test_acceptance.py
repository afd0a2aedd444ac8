"""Acceptance criteria, one test each, with a PASS/FAIL line per criterion."""
import functools
import sys

import numpy as np
import pytest

from oddgeom import expr as E
from oddgeom.connection import christoffel, covariant_derivative, verify_connection
from oddgeom.curves import PiecewiseCurve, check_odd_regular, speeds
from oddgeom.distance import DistanceQuery, distance_estimate, metric_space_check
from oddgeom.fixtures import NAMES, get_fixture
from oddgeom.flows import (GeodesicProblem, geodesic_residual, integrate_geodesic, invert_time_map,
                           lines, perturbed_flow_experiment, radial_directions, sector_seeds)
from oddgeom.frames import (VectorField, frame_field_expr, frame_gram, gram_schmidt_frame,
                            integrate_volume)
from oddgeom.metric import OddMetric, sample_points


def criterion(number, title):
    def wrap(test):
        @functools.wraps(test)
        def run(*args, **kwargs):
            try:
                test(*args, **kwargs)
            except BaseException:
                sys.__stdout__.write(f"\ncriterion {number:2d} FAIL  {title}\n")
                raise
            sys.__stdout__.write(f"\ncriterion {number:2d} PASS  {title}\n")
        return run
    return wrap


def line():
    return get_fixture("line_x2").metric


def cross():
    return get_fixture("r2_cross").metric


def frame_field(m, text):
    return frame_field_expr(gram_schmidt_frame(m), text)


def coord_field(n, i):
    return VectorField(tuple(E.ONE if k == i else E.ZERO for k in range(n)))


@criterion(1, "Christoffel symbol on the line equals 1/x")
def test_christoffel_anchor():
    xs = np.array([0.25, 0.5, 2.0])
    G, ok = christoffel(line()).eval(xs[:, None])
    assert ok.all()
    np.testing.assert_allclose(G[:, 0, 0, 0], 1 / xs, rtol=1e-12, atol=0)


@criterion(2, "covariant derivative table on the line")
def test_covariant_derivative_table():
    m = line()
    d = coord_field(1, 0)
    e = gram_schmidt_frame(m).field(0)
    cases = [((d, d), lambda x: 1 / x), ((e, d), lambda x: 1 / (abs(x) * x)),
             ((d, e), lambda x: 0.0), ((e, e), lambda x: 0.0)]
    for (X, Y), want in cases:
        V = covariant_derivative(m, X, Y)
        for x in (0.5, -0.5, 1.5, -1.5):
            assert abs(V.program.at([x])[0] - want(x)) <= 1e-10


@criterion(3, "square-root curve has speed 1/2 and is regular")
def test_curve_speed():
    curve = PiecewiseCurve.from_exprs(-1, 1, ["t/abs(t)*sqrt(abs(t))"])
    ts = np.linspace(-0.95, 0.95, 20)
    assert np.all(ts != 0)
    assert np.max(np.abs(speeds(line(), curve, ts) - 0.5)) <= 1e-10
    assert check_odd_regular(line(), curve).regular


@criterion(4, "orthonormal frame of the crossing metric")
def test_frame_reproduction():
    m = cross()
    F = gram_schmidt_frame(m)
    X = sample_points(m, 1000, 0)
    X = X[np.min(np.abs(X), axis=1) > 1e-2][:200]
    assert len(X) == 200
    assert np.max(np.abs(frame_gram(F, X) - np.eye(2))) <= 1e-9

    P = X[:20]
    x, y = P[:, 0], P[:, 1]
    e1 = np.stack([1 / np.sqrt(x**2 + y**2), 0 * x], axis=1)
    den = 2 * np.sqrt(x**2 * y**2 * (x**2 + y**2))
    e2 = np.stack([(x**2 - y**2) / den, (x**2 + y**2) / den], axis=1)
    M, ok = F.eval(P)
    assert ok.all()
    for got, want in ((M[:, 0], e1), (M[:, 1], e2)):
        sign = np.sign(np.sum(got * want, axis=1))[:, None]
        assert np.max(np.abs(sign * got - want)) <= 1e-9


@criterion(5, "invariant lines through the origin")
def test_invariant_lines():
    m = cross()
    slopes = [d[1] / d[0] for d in lines(radial_directions(m, frame_field(m, "E2"), [0, 0]))]
    assert slopes == [pytest.approx(-1.8393, abs=1e-3)]
    slopes = sorted(d[1] / d[0] for d in lines(radial_directions(m, frame_field(m, "E1+E2"), [0, 0])))
    assert slopes == [pytest.approx(-3.3830, abs=1e-3), pytest.approx(1.0, abs=1e-3)]


@criterion(6, "volumes")
def test_volume():
    assert abs(integrate_volume(line(), [(-1, 1)]).value - 1.0) <= 1e-8
    assert abs(integrate_volume(OddMetric.euclidean(3), [(0, 1)] * 3).value - 1.0) <= 1e-12


@criterion(7, "distances on the line")
def test_distance_oracle():
    def d(p, q):
        return distance_estimate(line(), DistanceQuery((p,), (q,))).value

    assert abs(d(0.0, 1.0) - 0.5) <= 1e-3
    for a in (0.5, 1.0):
        assert abs(d(-a, a) - a * a) <= 1e-3


@criterion(8, "metric-space axioms")
def test_metric_space_suite():
    for m in (OddMetric.euclidean(2), line(), cross()):
        rep = metric_space_check(m, seed=0, count=10)
        assert rep.passed and not rep.violations


@criterion(9, "geodesic residual, energy and straightness")
def test_geodesic_properties():
    cases = [(line(), [1.0], [-1.0], (0, 1.5)), (cross(), [0.5, 0.3], [-1, -1], (0, 1))]
    for m, x0, v0, span in cases:
        curve = integrate_geodesic(GeodesicProblem(m, x0, v0, span))
        assert curve.crossings
        # the residual uses centred differences, so stay inside the interval
        ts = np.linspace(*span, 203)[1:-1]
        ts = ts[np.min(np.abs(ts[:, None] - np.array(curve.crossings)[None]), axis=1) > 1e-9]
        P, V = curve.position(ts), curve.velocity(ts)
        off = m.stratum_distance(P) > 0.05
        res = geodesic_residual(m, curve, ts)
        assert np.max(res[off] / (1 + np.sum(V[off] ** 2, axis=1))) <= 1e-6
        energy = speeds(m, curve, ts) ** 2
        assert np.max(np.abs(energy / energy[0] - 1)) <= 1e-6

    m = OddMetric.euclidean(3, box=[(-5, 5)] * 3)
    rng = np.random.default_rng(9)
    for _ in range(3):
        x0, v0 = rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3)
        curve = integrate_geodesic(GeodesicProblem(m, x0, v0, (0, 1)))
        ts = np.linspace(0, 1, 21)
        np.testing.assert_allclose(curve.position(ts), x0 + ts[:, None] * v0, rtol=0, atol=1e-9)


@criterion(10, "time map round trip for |k|")
def test_time_map_round_trip():
    tm = invert_time_map(abs, (-2, 2))
    t = np.linspace(-1, 1, 201)
    np.testing.assert_allclose(tm(t), np.sign(t) * np.sqrt(2 * np.abs(t)), rtol=0, atol=1e-9)


@criterion(11, "metric compatibility and torsion-freeness")
def test_connection_axioms():
    for name in NAMES:
        rep = verify_connection(get_fixture(name).metric)
        assert rep.passed and rep.torsion_free and rep.max_compat_error <= 1e-5


@criterion(12, "perturbed flows approach the singular point")
def test_perturbation_experiment():
    from oddgeom.cli import inbound_sector

    m = cross()
    X = frame_field(m, "E1+E2")
    lo, hi = inbound_sector(radial_directions(m, X, [0, 0]))
    seeds = sector_seeds([0, 0], 1.0, lo, hi, 12)
    eps = [1e-1, 1e-2, 1e-3, 1e-4]
    med = perturbed_flow_experiment(m, X, eps, [0, 0], seeds, 1, 1.0).medians()
    values = [med[e] for e in eps]
    assert all(b <= a for a, b in zip(values, values[1:]))
