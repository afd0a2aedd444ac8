import itertools

import numpy as np
import pytest

from oddgeom import expr as E
from oddgeom.errors import EvaluationFailure, MetricFormatError
from oddgeom.fixtures import NAMES, get_fixture
from oddgeom.metric import (OddMetric, Stratum, degenerate_rank, format_metric_text,
                            parse_metric_text, pullback_scaling, read_metric, restrict,
                            sample_points, validate, write_metric)
from oddgeom.simplify import simplify

SPEC_FILE = """\
dim = 2
coords = x, y
g[1][1] = x^2+y^2
g[1][2] = y^2-x^2
g[2][2] = x^2+y^2
stratum = 1          # x = 0
stratum = 2          # y = 0
box = -5..5, -5..5
"""


def _entries(m):
    return [[simplify(m.g(i, j)) for j in range(m.dim)] for i in range(m.dim)]


def _same_metric(a, b):
    return (a.dim == b.dim and a.coords == b.coords and _entries(a) == _entries(b)
            and tuple(sorted(a.strata)) == tuple(sorted(b.strata)))


# ---------------------------------------------------------------------------
# validate


@pytest.mark.parametrize("name", NAMES)
def test_builtin_metrics_validate(name):
    assert validate(get_fixture(name).metric).passed


def test_r3_g_degenerates_on_the_two_axes():
    m = get_fixture("r3_g").metric
    rep = validate(m)
    assert rep.passed
    assert degenerate_rank(m, [0, 0.5, 0]) == 1 and degenerate_rank(m, [0.5, 0, 0]) == 1
    assert degenerate_rank(m, [0.5, 0.5, 0]) == 0 and degenerate_rank(m, [0, 0.5, 0.5]) == 0


def test_euclidean_validates_with_unit_determinant():
    rep = validate(OddMetric.euclidean(3))
    assert rep.passed and rep.off_locus_min_det == pytest.approx(1.0, abs=1e-12)


def test_undeclared_strata_fail():
    m = get_fixture("r3_g").metric.with_strata([])
    rep = validate(m)
    assert not rep.passed and "degenerate off the declared strata" in rep.reason


def test_indefinite_metric_fails():
    m = OddMetric.from_matrix([["1", "0"], ["0", "x"]], ["x", "y"], strata=[(0,)],
                              box=[(-1, 1), (-1, 1)])
    rep = validate(m)
    assert not rep.passed and "semidefinite" in rep.reason


def test_pole_off_locus_raises():
    # samples projected onto {x = 0} hit the pole, which lies on no declared stratum
    m = OddMetric.from_matrix([["1/x", "0"], ["0", "1"]], ["x", "y"], box=[(-1, 1), (-1, 1)])
    with pytest.raises(EvaluationFailure):
        validate(m)


def test_validation_is_reproducible():
    m = get_fixture("r2_cross").metric
    assert validate(m, rng_seed=5).to_dict() == validate(m, rng_seed=5).to_dict()


@pytest.mark.parametrize("name", NAMES)
def test_pass_implies_full_rank_off_strata(name):
    m = get_fixture(name).metric
    X = sample_points(m, 128, 1)
    off = m.stratum_distance(X) > 1e-2
    assert all(degenerate_rank(m, p) == 0 for p in X[off])


@pytest.mark.parametrize("name", NAMES)
def test_evaluated_matrix_is_exactly_symmetric(name):
    m = get_fixture(name).metric
    G, _ = m.eval_matrix(sample_points(m, 64, 2))
    assert np.array_equal(G, np.swapaxes(G, 1, 2))


def test_validate_rejects_bad_arguments():
    m = OddMetric.euclidean(2)
    with pytest.raises(ValueError):
        validate(m, samples=0)
    with pytest.raises(ValueError):
        validate(m, tol=0.0)


# ---------------------------------------------------------------------------
# restrict and rank


def test_r3_h_on_x_axis_is_x_squared():
    m = restrict(get_fixture("r3_h").metric, (1, 2))
    assert m.dim == 1 and m.coords == ("x",)
    assert simplify(m.g(0, 0)) == simplify(E.parse("x^2", ["x"]))
    assert degenerate_rank(m, [0.0]) == 1 and degenerate_rank(m, [0.3]) == 0


def test_r3_g_on_y_axis_is_riemannian():
    m = restrict(get_fixture("r3_g").metric, (0, 2))
    assert m.dim == 1 and m.g(0, 0) == E.ONE
    assert validate(m).passed


def test_r3_h_ranks_on_axes():
    m = get_fixture("r3_h").metric
    assert degenerate_rank(m, [0, 0.5, 0]) == 2
    assert degenerate_rank(m, [0.5, 0, 0]) == 1


def test_euclidean_restricted_to_a_line():
    m = OddMetric.euclidean(3).with_strata([(0, 1)])
    line = restrict(m, (0, 1))
    assert line.dim == 1 and line.g(0, 0) == E.ONE
    assert degenerate_rank(OddMetric.euclidean(3), [0.1, 0.2, 0.3]) == 0


def test_restrict_requires_a_declared_stratum():
    with pytest.raises(ValueError):
        restrict(get_fixture("r2_cross").metric, (0, 1))
    with pytest.raises(ValueError):
        Stratum([])


def _three_strata_metric():
    g = [["x^2+y^2*z^2", "x*y", "0"], ["x*y", "y^2+x^2", "z*x"], ["0", "z*x", "1+x^2+y^2"]]
    return OddMetric.from_matrix(g, ["x", "y", "z"], strata=[(0,), (1,), (0, 1)],
                                 box=[(-1, 1)] * 3, name="three")


@pytest.mark.parametrize("m", [_three_strata_metric()] + [get_fixture(n).metric for n in NAMES],
                         ids=lambda m: m.name)
def test_restriction_composes(m):
    declared = set(m.strata)
    for s, t in itertools.permutations(m.strata, 2):
        union = Stratum(s.vanishing + t.vanishing)
        if union not in declared or len(union.vanishing) == m.dim:
            continue
        inner = restrict(m, s)
        keep = [i for i in range(m.dim) if i not in s.vanishing]
        rest = [keep.index(i) for i in t.vanishing if i not in s.vanishing]
        if not rest:
            continue
        rest = Stratum(rest)
        assert _same_metric(restrict(inner, rest), restrict(m, union))


def test_restriction_compose_case_is_exercised():
    m = _three_strata_metric()
    via = restrict(restrict(m, (0,)), (0,))
    assert via.coords == ("z",)
    assert simplify(via.g(0, 0)) == E.ONE


# ---------------------------------------------------------------------------
# file format


def test_spec_file_parses_to_r2_cross():
    m = parse_metric_text(SPEC_FILE)
    assert _same_metric(m, get_fixture("r2_cross").metric)
    assert m.box == ((-5.0, 5.0), (-5.0, 5.0))


@pytest.mark.parametrize("name", NAMES)
def test_text_round_trip(name, tmp_path):
    m = get_fixture(name).metric
    path = tmp_path / f"{name}.odd"
    write_metric(m, path)
    back = read_metric(path)
    assert _same_metric(back, m) and back.box == m.box
    assert format_metric_text(back) == format_metric_text(m)


def test_missing_entries_default_to_zero():
    m = parse_metric_text("dim = 2\ng[1][1] = 1\ng[2][2] = x^2\nstratum = 1\n")
    assert m.g(0, 1) == E.ZERO and m.coords == ("x", "y")


@pytest.mark.parametrize("text", [
    "g[1][1] = 1\n",                          # no dim
    "dim = 2\ng[2][1] = x\n",                 # lower triangle
    "dim = 1\ng[1][1] = 1\ng[1][1] = 2\n",    # duplicate entry
    "dim = 1\ncoords = x, y\n",               # wrong coordinate count
    "dim = 1\nstratum = 0\n",                 # 0-based stratum
    "dim = 1\nbox = -1\n",                    # malformed box
    "dim = 1\ncolour = red\n",                # unknown key
    "dim = 1\ng[1][1] = x +\n",               # bad expression
    "dim = 2\nstratum = 1\nstratum = 1\n",    # duplicate strata
])
def test_malformed_files(text):
    with pytest.raises(MetricFormatError):
        parse_metric_text(text)


def test_pullback_scaling_entries():
    m = get_fixture("line_x2").metric
    pb = pullback_scaling(m, 2.0)
    assert pb.at([0.25])[0, 0] == pytest.approx(4 * 0.5 ** 2)
    assert pb.box == ((-1.0, 1.0),)
