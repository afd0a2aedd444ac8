import numpy as np
import pytest

from oddgeom import expr as E
from oddgeom.compiled import Program
from oddgeom.curves import speeds
from oddgeom.errors import NotMonotone, SingularStart, TangentPoleContradiction
from oddgeom.fixtures import get_fixture
from oddgeom.flows import (FlowOptions, FlowProblem, GeodesicProblem, clearing_factor,
                           geodesic_residual, integrate_flow, integrate_geodesic,
                           invert_time_map, lines, perturbed_flow_experiment,
                           radial_directions, sector_seeds)
from oddgeom.frames import VectorField, frame_field_expr, gram_schmidt_frame
from oddgeom.metric import OddMetric


def cross():
    return get_fixture("r2_cross").metric


def line():
    return get_fixture("line_x2").metric


def frame_field(m, text):
    return frame_field_expr(gram_schmidt_frame(m), text)


def _point_to_polyline(P, Q):
    a, d = Q[:-1], np.diff(Q, axis=0)
    dd = np.einsum("ij,ij->i", d, d)
    out = np.empty(len(P))
    for k, p in enumerate(P):
        u = np.clip(np.einsum("ij,ij->i", p - a, d) / dd, 0.0, 1.0)
        out[k] = np.min(np.linalg.norm(a + u[:, None] * d - p, axis=1))
    return out


# ---------------------------------------------------------------------------
# flows


def test_e2_crosses_the_x_axis():
    m = cross()
    curve, trace = integrate_flow(FlowProblem(m, frame_field(m, "E2"), [0.8, 0.0], (-0.3, 0.3)))
    assert trace.crossings == [pytest.approx(0.0, abs=1e-12)]
    y = curve.position([-0.3, 0.3])[:, 1]
    assert y[0] < -0.1 and y[1] > 0.1
    # the frame field has a pole on the axis, so the crossing shows in positions only
    assert np.isnan(curve.velocity([0.0])[0]).all()
    near = curve.position([-1e-4, 1e-4])[:, 1]
    assert near[0] < 0 < near[1]


def test_euclidean_unit_field_is_a_straight_line():
    m = OddMetric.euclidean(2)
    curve, _ = integrate_flow(FlowProblem(m, frame_field(m, "E1"), [0, 0], (0, 1)))
    ts = np.linspace(0, 1, 11)
    np.testing.assert_allclose(curve.position(ts), np.stack([ts, 0 * ts], 1), atol=1e-12)


def test_line_flow_has_unit_speed_through_zero():
    m = line()
    curve, trace = integrate_flow(FlowProblem(m, frame_field(m, "E1"), [0.0], (-0.5, 0.5)))
    ts = np.array([-0.5, -1e-3, -1e-6, 1e-6, 1e-4, 0.3, 0.5])
    x = curve.position(ts)[:, 0]
    np.testing.assert_allclose(x**2 / (2 * np.abs(ts)), 1.0, rtol=1e-6)
    assert np.all(np.sign(x) == np.sign(ts))
    assert simplify_str(trace.h) == "abs(x)"


def simplify_str(e):
    return E.to_string(E.simplify(e), ["x"])


def test_clearing_factor_of_the_cross_frame():
    m = cross()
    h = clearing_factor(frame_field(m, "E2").to_coords().components)
    P = np.array([[0.0, 0.5], [0.5, 0.0], [0.3, 0.4]])
    hv = Program.build([h], 2)(P)[:, 0]
    assert hv[0] == 0 and hv[1] == 0 and hv[2] > 0


@pytest.mark.parametrize("p0", [[0.8, 0.1], [-0.4, 0.7]])
def test_flow_is_tangent_to_the_field(p0):
    m = cross()
    X = frame_field(m, "E2")
    curve, _ = integrate_flow(FlowProblem(m, X, p0, (0, 0.4)))
    ts = np.linspace(0.01, 0.39, 77)
    P = curve.position(ts)
    Xv = Program.build(X.to_coords().components, 2)(P)
    h = 1e-6
    V = (curve.position(ts + h) - curve.position(ts - h)) / (2 * h)
    off = m.stratum_distance(P) > 1e-3
    err = np.linalg.norm(V - Xv, axis=1) / (1 + np.linalg.norm(Xv, axis=1))
    assert np.max(err[off]) <= 1e-6


def test_rescaled_field_traces_the_same_path():
    m = cross()
    X = frame_field(m, "E2")
    sigma = E.parse("1/(1+x^2+y^2)", m.coords)
    ts = np.linspace(0, 0.6, 3001)
    A = integrate_flow(FlowProblem(m, X, [0.8, 0.1], (0, 0.6)))[0].position(ts)
    B = integrate_flow(FlowProblem(m, X.scale(sigma), [0.8, 0.1], (0, 0.6)))[0].position(ts)
    # sigma <= 1, so B covers an initial arc of A; cut A where B ends
    stop = int(np.argmin(np.linalg.norm(A - B[-1], axis=1)))
    hausdorff = max(_point_to_polyline(B, A[: stop + 2]).max(), _point_to_polyline(A[:stop], B).max())
    assert hausdorff <= 1e-6


@pytest.mark.parametrize("p0", [[0.8, 0.0], [0.0, 0.6], [-0.5, 0.0]])
def test_uniqueness_at_general_stratum_points(p0):
    m = cross()
    X = frame_field(m, "E2")
    curves = [integrate_flow(FlowProblem(m, X, p0, (-0.3, 0.3), FlowOptions(rtol=r, atol=r * 1e-2)))[0]
              for r in (1e-8, 1e-10)]
    ts = np.linspace(-0.3, 0.3, 61)
    assert np.max(np.abs(curves[0].position(ts) - curves[1].position(ts))) <= 1e-5


def test_singular_start_suggests_directions():
    m = cross()
    with pytest.raises(SingularStart) as info:
        integrate_flow(FlowProblem(m, frame_field(m, "E2"), [0, 0], (0, 0.3)))
    assert len(lines(info.value.directions)) == 1


def test_pole_tangent_to_stratum_is_contradiction():
    m = cross()
    X = VectorField((E.parse("1/abs(y)", m.coords), E.ZERO))
    with pytest.raises(TangentPoleContradiction):
        integrate_flow(FlowProblem(m, X, [0.5, 0.0], (0, 0.3)))


def test_flow_problem_rejects_bad_input():
    m = cross()
    X = frame_field(m, "E1")
    with pytest.raises(ValueError):
        FlowProblem(m, X, [0.0], (0, 1))
    with pytest.raises(ValueError):
        FlowProblem(m, X, [0.0, 0.5], (1, 0))
    with pytest.raises(ValueError):
        integrate_flow(FlowProblem(m, X, [9.0, 0.5], (0, 1)))


# ---------------------------------------------------------------------------
# time map


def test_time_map_of_constant_density():
    tm = invert_time_map(lambda k: 1.0, (-1, 1))
    t = np.linspace(-1, 1, 9)
    np.testing.assert_allclose(tm(t), t, atol=1e-12)


def test_time_map_of_abs():
    tm = invert_time_map(lambda k: abs(k), (-2, 2))
    assert tm.t_range == pytest.approx((-2.0, 2.0), rel=1e-12)
    t = np.array([-1.9, -0.5, -1e-3, 1e-6, 0.25, 2.0])
    np.testing.assert_allclose(tm(t), np.sign(t) * np.sqrt(2 * np.abs(t)), rtol=1e-7)


def test_time_map_of_square():
    tm = invert_time_map(lambda k: k * k, (-2, 2))
    t = np.array([-2.5, -0.3, 0.01, 1.0, 8 / 3])
    np.testing.assert_allclose(tm(t), np.cbrt(3 * t), rtol=1e-7)


@pytest.mark.parametrize("f", [lambda k: 1.0, abs, lambda k: k * k, lambda k: abs(k) ** 0.5])
def test_time_map_round_trip(f):
    tm = invert_time_map(f, (-2, 2))
    t = np.linspace(*tm.t_range, 41)
    back = tm.t_of_k(tm(t))
    assert np.all(np.abs(back - t) <= 1e-9 * np.maximum(1.0, np.abs(t)))
    assert np.all(np.diff(tm(t)) > 0)


def test_time_map_from_samples():
    ks = np.linspace(-1, 1, 201)
    tm = invert_time_map((ks, np.abs(ks)), (-1, 1))
    assert tm(0.5)[0] == pytest.approx(1.0, rel=1e-6)


def test_negative_density_is_rejected():
    ks = np.linspace(-1, 1, 11)
    with pytest.raises(NotMonotone):
        invert_time_map((ks, ks), (-1, 1))
    with pytest.raises(NotMonotone):
        invert_time_map(lambda k: 0.0 if abs(k) < 0.5 else 1.0, (-1, 1))


# ---------------------------------------------------------------------------
# radial directions


def test_e2_has_one_invariant_line():
    m = cross()
    ls = lines(radial_directions(m, frame_field(m, "E2"), [0, 0]))
    assert len(ls) == 1
    a = ls[0][1] / ls[0][0]
    assert a == pytest.approx(-1.8393, abs=1e-4)
    assert abs(a**3 + a**2 - a + 1) <= 1e-5


def test_e1_plus_e2_has_two_invariant_lines():
    m = cross()
    dirs = radial_directions(m, frame_field(m, "E1+E2"), [0, 0])
    slopes = sorted(d[1] / d[0] for d in lines(dirs))
    assert slopes == [pytest.approx(-3.3830, abs=1e-4), pytest.approx(1.0, abs=1e-6)]
    # each slope is a root of 2 a |a| + a - a^3 - a^2 - 1
    for a in slopes:
        assert abs(2 * a * abs(a) + a - a**3 - a**2 - 1) <= 1e-5
    assert {d.tag for d in dirs} == {"inbound", "outbound"}


def test_euclidean_constant_field_direction():
    m = OddMetric.euclidean(2)
    dirs = radial_directions(m, VectorField((E.ONE, E.ZERO)), [0.3, 0.2])
    assert len(dirs) == 1
    np.testing.assert_allclose(dirs[0].direction, [1.0, 0.0], atol=1e-9)
    assert dirs[0].tag == "outbound"


def test_one_dimensional_directions():
    m = line()
    dirs = radial_directions(m, frame_field(m, "E1"), [0.0])
    assert [d.tag for d in dirs] == ["outbound", "inbound"]


# ---------------------------------------------------------------------------
# geodesics


def test_euclidean_geodesic_is_straight():
    m = OddMetric.euclidean(2, box=[(-5, 5), (-5, 5)])
    curve = integrate_geodesic(GeodesicProblem(m, [0, 0], [1, 2], (0, 1)))
    ts = np.linspace(0, 1, 11)
    np.testing.assert_allclose(curve.position(ts), np.stack([ts, 2 * ts], 1), atol=1e-12)


def test_line_geodesic_passes_through_zero():
    m = line()
    curve = integrate_geodesic(GeodesicProblem(m, [1.0], [-1.0], (0, 1.5)))
    assert curve.crossings == [pytest.approx(0.5, abs=1e-9)]
    ts = np.linspace(0, 1.5, 31)
    x = curve.position(ts)[:, 0]
    # x^2/2 is the arclength from 0, so x|x| = 1 - 2t
    np.testing.assert_allclose(x * np.abs(x), 1 - 2 * ts, atol=1e-9)
    sp = speeds(m, curve, ts[ts != 0.5])
    assert np.max(np.abs(sp - 1.0)) <= 1e-6


def test_line_geodesic_residual_oracle():
    # sqrt(t) is a geodesic of x^2 dx^2: x'' + x'^2/x = -t^(-3/2)/4 + t^(-3/2)/4 = 0
    from oddgeom.connection import christoffel

    G, ok = christoffel(line()).eval(np.array([[np.sqrt(0.3)]]))
    v, a = 0.5 / np.sqrt(0.3), -0.25 * 0.3 ** -1.5
    assert a + G[0, 0, 0, 0] * v * v == pytest.approx(0.0, abs=1e-12)


def test_cross_geodesic_example():
    m = cross()
    curve = integrate_geodesic(GeodesicProblem(m, [1, 1], [1, 0], (0, 0.5)))
    ts = np.linspace(0, 0.5, 101)
    V = curve.velocity(ts)
    res = geodesic_residual(m, curve, ts)
    assert np.nanmax(res / (1 + np.sum(V**2, axis=1))) <= 1e-6
    energy = speeds(m, curve, ts) ** 2
    assert np.max(np.abs(energy / energy[0] - 1)) <= 1e-6


def test_cross_geodesic_through_the_locus():
    m = cross()
    curve = integrate_geodesic(GeodesicProblem(m, [0.5, 0.3], [-1, -1], (0, 1)))
    assert len(curve.crossings) >= 1
    ts = np.linspace(0, 1, 201)
    P, V = curve.position(ts), curve.velocity(ts)
    off = m.stratum_distance(P) > 0.05
    res = geodesic_residual(m, curve, ts)
    assert np.nanmax(res[off] / (1 + np.sum(V[off] ** 2, axis=1))) <= 1e-6
    energy = speeds(m, curve, ts) ** 2
    assert np.nanmax(np.abs(energy / energy[0] - 1)) <= 1e-6


def test_geodesic_problem_rejects_zero_velocity():
    with pytest.raises(ValueError):
        GeodesicProblem(cross(), [1, 1], [0, 0], (0, 1))


# ---------------------------------------------------------------------------
# perturbation experiment


def test_unperturbed_experiment_matches_the_flow():
    m = cross()
    X = frame_field(m, "E2")
    curve, trace = integrate_flow(FlowProblem(m, X, [0.8, 0.1], (0, 0.6)))
    rep = perturbed_flow_experiment(m, X, [0.0], [0, 0], [[0.8, 0.1]], 1, 1.0)
    sol = rep.solutions[(0.0, 0)]
    ts = np.linspace(0, 0.6, 50)
    k = trace.time_map(ts)
    assert np.all(k <= sol.t[-1])
    np.testing.assert_allclose(sol.sol(k)[:2].T, curve.position(ts), atol=1e-9)


def test_euclidean_experiment_passes_straight():
    m = OddMetric.euclidean(2)
    seeds = np.array([[-0.5, y] for y in (-0.4, -0.2, 0.2, 0.4)])
    rep = perturbed_flow_experiment(m, VectorField((E.ONE, E.ZERO)), [1e-1, 1e-2], [0, 0],
                                    seeds, 0, 0.5)
    assert len(rep.rows) == 8
    for r in rep.rows:
        assert r.exit_tag == "exit"
        assert r.dist_to_p >= 0.5 * abs(seeds[r.seed_id, 1])
        assert r.direction[0] > 0.9


def test_seeds_between_invariant_lines_converge():
    from oddgeom.cli import inbound_sector

    m = cross()
    X = frame_field(m, "E1+E2")
    lo, hi = inbound_sector(radial_directions(m, X, [0, 0]))
    seeds = sector_seeds([0, 0], 1.0, lo, hi, 12)
    eps = [1e-1, 1e-2, 1e-3, 1e-4]
    med = perturbed_flow_experiment(m, X, eps, [0, 0], seeds, 1, 1.0).medians()
    values = [med[e] for e in eps]
    assert all(b < a for a, b in zip(values, values[1:]))
    assert values[-1] < 0.01


def test_experiment_csv(tmp_path):
    m = OddMetric.euclidean(2)
    rep = perturbed_flow_experiment(m, VectorField((E.ONE, E.ZERO)), [1e-2], [0, 0],
                                    [[-0.5, 0.2]], 0, 0.5)
    path = tmp_path / "exp.csv"
    rep.to_csv(path, m.coords)
    head, row = path.read_text().splitlines()
    assert head == "epsilon,seed_id,dist_to_p,dir_x,dir_y,exit_tag"
    assert row.startswith("0.01,0,") and row.endswith(",exit")
