"""Compare the Cython and pure-Python kernels.

Run with ``python3 benchmarks/bench_kernels.py``.  Each kernel is timed on the
workloads the library actually produces: batched evaluation of the r2_cross
Christoffel program and Dijkstra on a distance grid graph.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np
from scipy import sparse

from oddgeom import kernels
from oddgeom.connection import christoffel
from oddgeom.fixtures import get_fixture


def _program_workload(points: int):
    table = christoffel(get_fixture("r2_cross").metric)
    prog = table.program
    X = np.random.default_rng(0).uniform(-5, 5, size=(points, 2))
    args = (prog.ops, prog.arg_a, prog.arg_b, prog.consts, prog.outputs, X, 1e-12)
    return args, f"eval_program: {len(prog)} registers x {points} points"


def _graph_workload(side: int):
    rng = np.random.default_rng(1)
    n = side * side
    idx = np.arange(n).reshape(side, side)
    rows, cols = [], []
    for di, dj in ((0, 1), (1, 0), (1, 1), (1, -1)):
        a = idx[max(0, -di):side - max(0, di), max(0, -dj):side - max(0, dj)]
        b = idx[max(0, di):side + min(0, di) or None, max(0, dj):side + min(0, dj) or None]
        rows += [a.ravel(), b.ravel()]
        cols += [b.ravel(), a.ravel()]
    r, c = np.concatenate(rows), np.concatenate(cols)
    A = sparse.csr_matrix((rng.uniform(0.5, 1.5, r.size), (r, c)), shape=(n, n))
    args = (A.indptr.astype(np.int64), A.indices.astype(np.int64), A.data, 0)
    return args, f"dijkstra_csr: {n} nodes, {A.nnz} edges"


def _time(fn, args, repeat: int) -> float:
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--points", type=int, default=20000)
    ap.add_argument("--side", type=int, default=65)
    ap.add_argument("--repeat", type=int, default=5)
    opts = ap.parse_args()

    try:
        fast = kernels.get_backend("cython")
    except ImportError:
        print("Cython extension not built; only the Python backend is available")
        fast = None
    slow = kernels.get_backend("python")

    for k, (args, label) in enumerate((_program_workload(opts.points),
                                       _graph_workload(opts.side))):
        t_py = _time(slow[k], args, opts.repeat)
        line = f"{label:<48} python {t_py * 1e3:9.2f} ms"
        if fast is not None:
            t_cy = _time(fast[k], args, opts.repeat)
            a, b = fast[k](*args), slow[k](*args)
            same = all(np.allclose(x, y, equal_nan=True) for x, y in zip(a, b))
            line += f"  cython {t_cy * 1e3:9.2f} ms  speedup {t_py / t_cy:6.1f}x  agree={same}"
        print(line)


if __name__ == "__main__":
    main()
