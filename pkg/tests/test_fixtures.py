from pathlib import Path

import pytest

from oddgeom.errors import UnknownFixture
from oddgeom.fixtures import (DERIVED, EMITTED, NAMES, PAPER, TRIVIAL, fixture_text, get_fixture,
                              write_fixture_files)
from oddgeom.metric import format_metric_text, parse_metric_text, validate

SHIPPED = Path(__file__).resolve().parent.parent / "fixtures"

CASES = [(name, exp) for name in NAMES for exp in get_fixture(name).expectations]


@pytest.mark.parametrize("name,exp", CASES, ids=[f"{n}-{e.key}" for n, e in CASES])
def test_expectation_holds(name, exp):
    ok, got = exp.check(get_fixture(name))
    assert ok, f"{name}.{exp.key}: got {got!r}, want {exp.value!r} +- {exp.tol!r}"


def test_every_expectation_is_tagged():
    for _, exp in CASES:
        assert exp.provenance in (PAPER, DERIVED, TRIVIAL)
        assert exp.tol >= 0


def test_expectation_keys_are_unique():
    for name in NAMES:
        keys = [e.key for e in get_fixture(name).expectations]
        assert len(keys) == len(set(keys))


@pytest.mark.parametrize("name", NAMES)
def test_fixture_validates(name):
    assert validate(get_fixture(name).metric).passed


def test_named_examples():
    line = get_fixture("line_x2")
    assert {e.key for e in line.expectations} >= {"christoffel_111_at_0.5", "volume_-1_1"}
    cross = get_fixture("r2_cross")
    assert set(cross.fields) >= {"E1", "E2"}
    assert get_fixture("euclid_n").metric.dim == 3
    assert get_fixture("euclid_5").metric.dim == 5


def test_fixture_boxes():
    assert get_fixture("line_x2").metric.box == ((-2.0, 2.0),)
    assert get_fixture("r2_cross").metric.box == ((-5.0, 5.0),) * 2
    assert get_fixture("r3_g").metric.box == ((-1.0, 1.0),) * 3


@pytest.mark.parametrize("name", ["nope", "euclid_0", "euclid_x", ""])
def test_unknown_fixture(name):
    with pytest.raises(UnknownFixture):
        get_fixture(name)


def test_emitted_files_are_byte_stable(tmp_path):
    a = write_fixture_files(tmp_path / "a")
    b = write_fixture_files(tmp_path / "b")
    assert [p.name for p in a] == [f"{n}.odd" for n in EMITTED]
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes()
        assert pa.read_bytes() == (SHIPPED / pa.name).read_bytes()


@pytest.mark.parametrize("name", EMITTED)
def test_emitted_file_reads_back(name):
    m = parse_metric_text(fixture_text(name))
    assert format_metric_text(m) == fixture_text(name)
    assert m.dim == get_fixture(name).metric.dim
    assert m.box == get_fixture(name).metric.box
