"""Pure numpy implementations of the hot kernels.

Semantics match ``_speedups.pyx`` operation for operation so that the two
backends agree bit for bit on finite results.
"""
from __future__ import annotations

import heapq

import numpy as np

CONST, VAR, ADD, SUB, MUL, DIV, NEG, POW, SQRT, ABS = range(10)
FINITE, POLE, INDET = 0, 1, 2


def eval_program(ops, arg_a, arg_b, consts, outputs, X, guard):
    """Run a register program on each row of ``X``.

    Returns ``(values, tags, locations)`` of shape ``(N, len(outputs))``.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    n_pts = X.shape[0]
    n_reg = len(ops)
    vals = np.empty((n_reg, n_pts))
    tags = np.zeros((n_reg, n_pts), dtype=np.int8)
    locs = np.full((n_reg, n_pts), -1, dtype=np.int32)
    with np.errstate(all="ignore"):
        for r in range(n_reg):
            op, a, b = int(ops[r]), int(arg_a[r]), int(arg_b[r])
            if op == CONST:
                vals[r] = consts[a]
                continue
            if op == VAR:
                vals[r] = X[:, a]
                continue
            va = vals[a]
            ta = tags[a]
            bad = ta != 0
            t = ta.copy()
            loc = locs[a].copy()
            if op in (ADD, SUB, MUL, DIV):
                vb = vals[b]
                tb = tags[b]
                take_b = (~bad) & (tb != 0)
                t[take_b] = tb[take_b]
                loc[take_b] = locs[b][take_b]
                bad = bad | take_b
            own = np.zeros(n_pts, dtype=np.int8)
            if op == ADD:
                v = va + vb
            elif op == SUB:
                v = va - vb
            elif op == MUL:
                v = va * vb
            elif op == NEG:
                v = -va
            elif op == ABS:
                v = np.abs(va)
            elif op == DIV:
                small = np.abs(vb) < guard
                own[small] = np.where(np.abs(va[small]) >= guard, POLE, INDET)
                v = va / np.where(small, 1.0, vb)
            elif op == POW:
                n = abs(b)
                base = va.copy()
                p = np.ones(n_pts)
                e = n
                while e:
                    if e & 1:
                        p = p * base
                    e >>= 1
                    if e:
                        base = base * base
                if b >= 0:
                    v = p
                else:
                    small = np.abs(p) < guard
                    own[small] = POLE
                    v = 1.0 / np.where(small, 1.0, p)
            elif op == SQRT:
                neg = va < -guard
                own[neg] = INDET
                v = np.sqrt(np.where(va < 0, 0.0, va))
            else:
                raise ValueError(f"bad opcode {op}")
            own[(own == 0) & np.isinf(v)] = POLE
            own[(own == 0) & np.isnan(v)] = INDET
            fresh = (~bad) & (own != 0)
            t[fresh] = own[fresh]
            loc[fresh] = r
            vals[r] = np.where(t == 0, v, np.nan)
            tags[r] = t
            locs[r] = loc
    out = np.asarray(outputs, dtype=np.intp)
    return vals[out].T.copy(), tags[out].T.copy(), locs[out].T.copy()


def dijkstra_csr(indptr, indices, weights, source):
    """Single-source shortest paths on a CSR graph (ties broken by node id)."""
    n = len(indptr) - 1
    dist = np.full(n, np.inf)
    pred = np.full(n, -1, dtype=np.int64)
    done = np.zeros(n, dtype=bool)
    dist[source] = 0.0
    heap = [(0.0, int(source))]
    while heap:
        d, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        for k in range(indptr[u], indptr[u + 1]):
            v = indices[k]
            nd = d + weights[k]
            if nd < dist[v]:
                dist[v] = nd
                pred[v] = u
                heapq.heappush(heap, (nd, int(v)))
    return dist, pred
