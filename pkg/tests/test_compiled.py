import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from strategies import exprs, points

from oddgeom import expr as E
from oddgeom import kernels
from oddgeom.compiled import Program

HAVE_CYTHON = True
try:
    kernels.get_backend("cython")
except ImportError:
    HAVE_CYTHON = False

BACKENDS = ["python"] + (["cython"] if HAVE_CYTHON else [])
TAG = {E.EvalTag.FINITE: 0, E.EvalTag.POLE: 1, E.EvalTag.INDETERMINATE: 2}


@settings(max_examples=300, deadline=None, suppress_health_check=list(HealthCheck))
@given(exprs(floats=True), points())
def test_program_matches_reference_evaluator(e, pt):
    ref = E.evaluate(e, pt)
    for backend in BACKENDS:
        vals, tags, _ = Program.build([e], 2).run(np.array([pt]), backend=backend)
        assert tags[0, 0] == TAG[ref.tag]
        if ref.is_finite:
            assert math.isclose(vals[0, 0], float(ref.value), rel_tol=1e-12, abs_tol=1e-12)
        else:
            assert math.isnan(vals[0, 0])


@pytest.mark.skipif(not HAVE_CYTHON, reason="extension not built")
def test_backends_agree_on_batches():
    rng = np.random.default_rng(0)
    es = [E.parse(t, ["x", "y"]) for t in ("1/x", "sqrt(x^2+y^2)", "x^2/x", "abs(x)*y^-3",
                                            "sqrt(x)", "(x*y)/(x-y)")]
    prog = Program.build(es, 2)
    X = rng.uniform(-2, 2, size=(500, 2))
    X[:20, 0] = 0.0
    X[20:40, 1] = X[20:40, 0]
    a = prog.run(X, backend="python")
    b = prog.run(X, backend="cython")
    np.testing.assert_array_equal(a[1], b[1])
    np.testing.assert_array_equal(a[2], b[2])
    np.testing.assert_allclose(a[0], b[0], rtol=1e-15, equal_nan=True)


@pytest.mark.skipif(not HAVE_CYTHON, reason="extension not built")
def test_dijkstra_backends_agree():
    from scipy import sparse
    from scipy.sparse.csgraph import dijkstra

    rng = np.random.default_rng(3)
    A = sparse.random(300, 300, density=0.03, random_state=4, format="csr")
    A = (A + A.T).tocsr()
    A.data = rng.uniform(0.1, 2.0, A.data.size)
    args = (A.indptr.astype(np.int64), A.indices.astype(np.int64), A.data, 0)
    d_py, pred_py = kernels.get_backend("python")[1](*args)
    d_cy, pred_cy = kernels.get_backend("cython")[1](*args)
    np.testing.assert_allclose(d_py, d_cy, rtol=1e-14)
    np.testing.assert_allclose(d_py, dijkstra(A, indices=0), rtol=1e-12)
    reach = np.isfinite(d_py)
    np.testing.assert_array_equal(pred_py[reach], pred_cy[reach])


def test_pole_location_points_at_failing_node():
    e = E.parse("x + 1/y", ["x", "y"])
    prog = Program.build([e], 2)
    _, tags, loc = prog.run(np.array([[1.0, 0.0]]))
    assert tags[0, 0] == 1
    assert prog.node_at(int(loc[0, 0])) == E.parse("1/y", ["x", "y"])


def test_shared_subtrees_compile_once():
    s = E.parse("x^2+y^2", ["x", "y"])
    prog = Program.build([E.Sqrt(s), E.Mul(s, s)], 2)
    assert len(prog) == len(Program.build([s], 2)) + 2


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")


def test_environment_forces_python_backend():
    import os
    import subprocess
    import sys

    env = dict(os.environ, ODDGEOM_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from oddgeom import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
