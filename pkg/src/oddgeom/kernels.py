"""Backend selection for the hot kernels.

The Cython extension is used when it is importable; setting
``ODDGEOM_PURE_PYTHON=1`` forces the numpy fallback.
"""
from __future__ import annotations

import os

from . import _fallback

BACKEND = "python"
eval_program = _fallback.eval_program
dijkstra_csr = _fallback.dijkstra_csr

if os.environ.get("ODDGEOM_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _speedups
    except ImportError:
        pass
    else:
        BACKEND = "cython"
        eval_program = _speedups.eval_program
        dijkstra_csr = _speedups.dijkstra_csr


def get_backend(name: str | None = None):
    """Return ``(eval_program, dijkstra_csr)`` for ``name`` (default: active)."""
    if name is None:
        return eval_program, dijkstra_csr
    if name == "python":
        return _fallback.eval_program, _fallback.dijkstra_csr
    if name == "cython":
        from . import _speedups
        return _speedups.eval_program, _speedups.dijkstra_csr
    raise ValueError(f"unknown backend {name!r}")
