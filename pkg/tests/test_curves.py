import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from oddgeom.curves import (PiecewiseCurve, arclength_parametrize, check_odd_regular, compose,
                            curve_table, length, reparametrize_to_regular, speed, speeds,
                            write_curve_csv)
from oddgeom.errors import DegenerateSegment, EvaluationFailure, UnboundedSpeed
from oddgeom.fixtures import get_fixture
from oddgeom.metric import OddMetric, degenerate_rank

SQRT_CURVE = "t/sqrt(abs(t))"  # sgn(t) sqrt|t|


def line():
    return get_fixture("line_x2").metric


def euclid(n=2):
    return OddMetric.euclidean(n)


# (metric, curve) pairs shared by the invariant tests
TEST_CURVES = {
    "line_sqrt": (line, lambda: PiecewiseCurve.from_exprs(-1, 1, [SQRT_CURVE])),
    "line_id": (line, lambda: PiecewiseCurve.from_exprs(-1, 1, ["t"])),
    "euclid_cubic": (euclid, lambda: PiecewiseCurve.from_exprs(-1, 1, ["t^3", "0"])),
    "euclid_polyline": (euclid, lambda: PiecewiseCurve.polyline([[0, 0], [3, 4], [3, 0]])),
    "cross_parabola": (lambda: get_fixture("r2_cross").metric,
                       lambda: PiecewiseCurve.from_exprs(-1, 1, ["t", "t^2-0.25"])),
    "r3_g_line": (lambda: get_fixture("r3_g").metric,
                  lambda: PiecewiseCurve.from_exprs(-0.8, 0.9, ["t", "0.5*t", "0.3"])),
}


# ---------------------------------------------------------------------------
# speed and length


@pytest.mark.parametrize("t", [-0.7, -0.2, 0.1, 0.6])
def test_sqrt_curve_has_speed_one_half(t):
    c = PiecewiseCurve.from_exprs(-1, 1, [SQRT_CURVE])
    assert speed(line(), c, t) == pytest.approx(0.5, rel=1e-12)


def test_speed_examples():
    assert speed(euclid(), PiecewiseCurve.from_exprs(0, 1, ["t", "0"]), 0.4) == 1.0
    assert speed(line(), PiecewiseCurve.from_exprs(0, 1, ["t"]), 0.3) == pytest.approx(0.3, rel=1e-14)


def test_speed_at_pole_raises():
    m = OddMetric.from_matrix([["1/x"]], ["x"], box=[(-1, 1)])
    with pytest.raises(EvaluationFailure):
        speed(m, PiecewiseCurve.from_exprs(-1, 1, ["t"]), 0.0)


def test_length_examples():
    assert length(line(), PiecewiseCurve.from_exprs(-1, 1, [SQRT_CURVE])) == pytest.approx(1.0, abs=1e-8)
    assert length(euclid(), PiecewiseCurve.polyline([[0, 0], [3, 4]])) == pytest.approx(5.0, abs=1e-12)
    assert length(line(), PiecewiseCurve.from_exprs(0, 1, ["t"])) == pytest.approx(0.5, abs=1e-9)


@pytest.mark.parametrize("name", TEST_CURVES)
def test_length_is_additive_over_splits(name):
    mk, ck = TEST_CURVES[name]
    m, c = mk(), ck()
    cuts = list(c.a + (c.b - c.a) * np.array([0.137, 0.5, 0.71]))
    pieces = c.split(cuts)
    total = sum(length(m, PiecewiseCurve([seg])) for seg in pieces.segments)
    assert total == pytest.approx(length(m, c), abs=1e-9)


@settings(max_examples=60, deadline=None, suppress_health_check=list(HealthCheck))
@given(st.sampled_from(["r3_g", "r3_h", "r2_cross", "line_x2"]), st.data())
def test_speed_is_nonnegative_and_vanishes_only_on_the_kernel(name, data):
    m = get_fixture(name).metric
    n = m.dim
    coord = st.floats(-0.9, 0.9, allow_nan=False)
    p = np.array(data.draw(st.lists(coord, min_size=n, max_size=n)))
    # put the base point on a stratum half of the time
    if data.draw(st.booleans()) and m.strata:
        s = data.draw(st.sampled_from(list(m.strata)))
        p[list(s.vanishing)] = 0.0
    v = np.array(data.draw(st.lists(st.sampled_from([-1.0, 0.0, 0.5, 1.0]), min_size=n, max_size=n)))
    exprs = [f"{float(p[i])!r}+({float(v[i])!r})*t" for i in range(n)]
    c = PiecewiseCurve.from_exprs(-0.05, 0.05, exprs)
    sp = speeds(m, c, [0.0])[0]
    assert sp >= 0
    if sp == 0 and np.any(v != 0):
        assert degenerate_rank(m, p) > 0
        G, _ = m.eval_matrix(p[None, :])
        np.testing.assert_allclose(G[0] @ v, 0.0, atol=1e-12)


# ---------------------------------------------------------------------------
# regularity


def test_sqrt_curve_is_odd_regular():
    rep = check_odd_regular(line(), PiecewiseCurve.from_exprs(-1, 1, [SQRT_CURVE]))
    assert rep.regular and len(rep.limits) == 1
    b = rep.limits[0]
    assert b.t == 0.0
    np.testing.assert_allclose(b.left, [1.0], atol=1e-12)
    np.testing.assert_allclose(b.right, [1.0], atol=1e-12)
    assert rep.max_speed == pytest.approx(0.5, rel=1e-9)


def test_euclidean_corner_is_not_regular():
    c = PiecewiseCurve.from_exprs(-1, 1, ["abs(t)", "t"])
    rep = check_odd_regular(euclid(), c)
    assert not rep.regular
    b = rep.limits[0]
    np.testing.assert_allclose(b.left, np.array([-1, 1]) / np.sqrt(2), atol=1e-9)
    np.testing.assert_allclose(b.right, np.array([1, 1]) / np.sqrt(2), atol=1e-9)


def test_smooth_line_is_regular():
    rep = check_odd_regular(line(), PiecewiseCurve.from_exprs(-1, 1, ["t"]))
    assert rep.regular
    assert all(b.match for b in rep.limits)


def test_polyline_corner_is_reported():
    c = PiecewiseCurve.polyline([[0, 0], [1, 0], [1, 1]])
    rep = check_odd_regular(euclid(), c)
    assert not rep.regular and rep.limits[0].t == 1.0
    assert rep.to_dict()["breakpoints"][0]["match"] is False


def test_unbounded_speed_is_detected():
    # classical speed of sgn(t) sqrt|t| blows up like |t|^(-1/2): about 158 at the
    # smallest Richardson step, past the bound 1/tol = 100
    c = PiecewiseCurve.from_exprs(-1, 1, [SQRT_CURVE])
    with pytest.raises(UnboundedSpeed):
        check_odd_regular(OddMetric.euclidean(1), c, tol=1e-2)
    assert check_odd_regular(line(), c, tol=1e-2).regular


def test_discontinuous_pieces_rejected():
    from oddgeom.curves import LinearSegment

    with pytest.raises(ValueError):
        PiecewiseCurve([LinearSegment(0, 1, [0, 0], [1, 0]), LinearSegment(1, 2, [1, 1], [2, 2])])


def test_stratum_crossings_become_breakpoints():
    m = get_fixture("r2_cross").metric
    c = PiecewiseCurve.from_exprs(-1, 1, ["t", "t^2-0.25"])
    np.testing.assert_allclose(c.stratum_crossings(m), [-0.5, 0.0, 0.5], atol=1e-14)
    np.testing.assert_allclose(c.split_at_strata(m).breakpoints, [-1, -0.5, 0, 0.5, 1], atol=1e-14)


# ---------------------------------------------------------------------------
# reparametrization


def test_sqrt_curve_reparametrizes_by_signed_square():
    c = PiecewiseCurve.from_exprs(-1, 1, [SQRT_CURVE])
    g, phi = reparametrize_to_regular(line(), c)
    s = np.array([-1.0, -0.6, -0.25, 0.3, 0.8, 1.0])
    np.testing.assert_allclose(phi(s), np.sign(s) * s**2, atol=1e-9)
    np.testing.assert_allclose(g.position(s)[:, 0], s, atol=1e-9)
    # the exact composition with phi recovers the identity curve
    ident = compose(c, _parse_t("t*abs(t)"), -1, 1)
    ts = np.linspace(-1, 1, 21)
    np.testing.assert_allclose(ident.position(ts)[:, 0], ts, atol=1e-12)


def _parse_t(text):
    from oddgeom import expr as E

    return E.parse(text, ["t"])


def test_unit_speed_line_has_identity_map():
    c = PiecewiseCurve.from_exprs(0, 2, ["0.6*t", "0.8*t"])
    g, phi = reparametrize_to_regular(euclid(), c)
    s = np.linspace(0, 2, 9)
    np.testing.assert_allclose(phi(s), s, atol=1e-12)
    np.testing.assert_allclose(g.position(s), c.position(s), atol=1e-12)


def test_reparametrization_start_shifts_the_domain():
    c = PiecewiseCurve.from_exprs(0, 2, ["0.6*t", "0.8*t"])
    _, phi = reparametrize_to_regular(euclid(), c, start=5.0)
    assert phi.domain == pytest.approx((5.0, 7.0))
    assert phi([6.0])[0] == pytest.approx(1.0, abs=1e-12)


def test_cubic_becomes_the_identity():
    c = PiecewiseCurve.from_exprs(-1, 1, ["t^3", "0"])
    g, phi = reparametrize_to_regular(euclid(), c)
    assert phi.domain == pytest.approx((-1.0, 1.0), abs=1e-9)
    s = np.linspace(-1, 1, 17)
    np.testing.assert_allclose(g.position(s), np.stack([s, 0 * s], 1), atol=1e-9)
    np.testing.assert_allclose(phi(s), np.cbrt(s), atol=1e-9)


def test_stationary_segment_cannot_be_reparametrized():
    c = PiecewiseCurve.from_exprs(0, 1, ["0.5", "0.5"])
    with pytest.raises(DegenerateSegment):
        reparametrize_to_regular(euclid(), c)


def test_tangency_to_the_kernel_is_not_degenerate():
    # (t, t^2 - 1/4) meets y = 0 at t = 1/2 with velocity (1, 1), the kernel there
    m = get_fixture("r2_cross").metric
    c = PiecewiseCurve.from_exprs(0, 1, ["t", "t^2-0.25"])
    assert speed(m, c, 0.5) == pytest.approx(0.0, abs=1e-12)
    _, phi = arclength_parametrize(m, c)
    assert phi.domain[1] == pytest.approx(length(m, c), abs=1e-9)


def test_reparametrized_velocity_is_bounded():
    c = PiecewiseCurve.from_exprs(-1, 1, [SQRT_CURVE])
    g, _ = reparametrize_to_regular(line(), c)
    V = g.velocity(np.linspace(-1, 1, 101))
    assert np.all(np.isfinite(V)) and np.max(np.abs(V)) <= 1.0 + 1e-9


@pytest.mark.parametrize("name", ["line_sqrt", "line_id", "euclid_cubic", "euclid_polyline",
                                  "cross_parabola"])
def test_length_is_invariant_under_reparametrization(name):
    mk, ck = TEST_CURVES[name]
    m, c = mk(), ck()
    g, phi = reparametrize_to_regular(m, c)
    assert np.all(np.diff(phi(np.linspace(*phi.domain, 200))) > 0)
    assert length(m, g) == pytest.approx(length(m, c), abs=1e-7)


@pytest.mark.parametrize("name", ["line_sqrt", "euclid_cubic", "cross_parabola", "r3_g_line"])
def test_arclength_parametrization_has_unit_speed(name):
    mk, ck = TEST_CURVES[name]
    m, c = mk(), ck()
    a, phi = arclength_parametrize(m, c)
    lo, hi = phi.domain
    assert hi - lo == pytest.approx(length(m, c), abs=1e-8)
    s = np.linspace(lo, hi, 401)
    # the speed is 1 away from the finitely many parameters on the locus
    bps = a.breakpoints
    s = s[np.min(np.abs(s[:, None] - bps[None, :]), axis=1) > 1e-6]
    assert np.max(np.abs(speeds(m, a, s) - 1.0)) <= 1e-6


# ---------------------------------------------------------------------------
# output


def test_curve_csv(tmp_path):
    m = get_fixture("r2_cross").metric
    c = PiecewiseCurve.from_exprs(0, 1, ["1+t", "1/3"])
    path = tmp_path / "c.csv"
    write_curve_csv(m, c, path, ts=[0.0, 0.5, 1.0])
    lines = path.read_text().splitlines()
    assert lines[0] == "t,x,y,speed"
    assert lines[2].split(",")[2] == "0.33333333333333331"
    table = np.loadtxt(path, delimiter=",", skiprows=1)
    np.testing.assert_array_equal(table, curve_table(m, c, [0.0, 0.5, 1.0]))
