# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: register-program evaluation and Dijkstra."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, isinf, isnan, INFINITY, NAN
from libc.stdlib cimport malloc, free

cnp.import_array()

DEF CONST = 0
DEF VAR = 1
DEF ADD = 2
DEF SUB = 3
DEF MUL = 4
DEF DIV = 5
DEF NEG = 6
DEF POW = 7
DEF SQRT = 8
DEF ABS = 9


cdef inline double _ipow(double base, long n) nogil:
    cdef double p = 1.0
    while n:
        if n & 1:
            p = p * base
        n >>= 1
        if n:
            base = base * base
    return p


def eval_program(const int[:] ops, const int[:] arg_a, const long[:] arg_b,
                 const double[:] consts, const int[:] outputs,
                 X, double guard):
    cdef double[:, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef Py_ssize_t n_pts = x.shape[0], n_reg = ops.shape[0], n_out = outputs.shape[0]
    vals_np = np.empty((n_pts, n_out))
    tags_np = np.zeros((n_pts, n_out), dtype=np.int8)
    locs_np = np.full((n_pts, n_out), -1, dtype=np.int32)
    cdef double[:, ::1] vals_out = vals_np
    cdef signed char[:, ::1] tags_out = tags_np
    cdef int[:, ::1] locs_out = locs_np
    cdef double* v = <double*> malloc(n_reg * sizeof(double))
    cdef signed char* t = <signed char*> malloc(n_reg * sizeof(signed char))
    cdef int* loc = <int*> malloc(n_reg * sizeof(int))
    cdef Py_ssize_t i, r, k
    cdef int op, a
    cdef long b
    cdef double va, vb, res, p
    cdef signed char own
    if v == NULL or t == NULL or loc == NULL:
        free(v); free(t); free(loc)
        raise MemoryError()
    try:
        with nogil:
            for i in range(n_pts):
                for r in range(n_reg):
                    op = ops[r]
                    a = arg_a[r]
                    b = arg_b[r]
                    if op == CONST:
                        v[r] = consts[a]; t[r] = 0; loc[r] = -1
                        continue
                    if op == VAR:
                        v[r] = x[i, a]; t[r] = 0; loc[r] = -1
                        continue
                    if t[a] != 0:
                        v[r] = NAN; t[r] = t[a]; loc[r] = loc[a]
                        continue
                    if (op == ADD or op == SUB or op == MUL or op == DIV) and t[b] != 0:
                        v[r] = NAN; t[r] = t[b]; loc[r] = loc[b]
                        continue
                    va = v[a]
                    own = 0
                    res = 0.0
                    if op == ADD:
                        res = va + v[b]
                    elif op == SUB:
                        res = va - v[b]
                    elif op == MUL:
                        res = va * v[b]
                    elif op == NEG:
                        res = -va
                    elif op == ABS:
                        res = fabs(va)
                    elif op == DIV:
                        vb = v[b]
                        if fabs(vb) < guard:
                            own = 1 if fabs(va) >= guard else 2
                        else:
                            res = va / vb
                    elif op == POW:
                        p = _ipow(va, b if b >= 0 else -b)
                        if b >= 0:
                            res = p
                        elif fabs(p) < guard:
                            own = 1
                        else:
                            res = 1.0 / p
                    elif op == SQRT:
                        if va < -guard:
                            own = 2
                        elif va < 0:
                            res = 0.0
                        else:
                            res = sqrt(va)
                    if own == 0:
                        if isinf(res):
                            own = 1
                        elif isnan(res):
                            own = 2
                    if own != 0:
                        v[r] = NAN; t[r] = own; loc[r] = <int> r
                    else:
                        v[r] = res; t[r] = 0; loc[r] = -1
                for k in range(n_out):
                    r = outputs[k]
                    vals_out[i, k] = v[r]
                    tags_out[i, k] = t[r]
                    locs_out[i, k] = loc[r]
    finally:
        free(v); free(t); free(loc)
    return vals_np, tags_np, locs_np


# binary heap keyed on (dist, node)
cdef inline bint _less(double da, long na, double db, long nb) nogil:
    return da < db or (da == db and na < nb)


def dijkstra_csr(const long[:] indptr, const long[:] indices, const double[:] weights, long source):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t m = indices.shape[0]
    dist_np = np.full(n, np.inf)
    pred_np = np.full(n, -1, dtype=np.int64)
    cdef double[::1] dist = dist_np
    cdef long[::1] pred = pred_np
    cdef cnp.uint8_t[::1] done = np.zeros(n, dtype=np.uint8)
    cdef Py_ssize_t cap = m + 1
    cdef double* hd = <double*> malloc(cap * sizeof(double))
    cdef long* hn = <long*> malloc(cap * sizeof(long))
    cdef Py_ssize_t size = 0, pos, child, parent
    cdef double d, nd, td
    cdef long u, w, tn
    cdef Py_ssize_t k
    if hd == NULL or hn == NULL:
        free(hd); free(hn)
        raise MemoryError()
    try:
        with nogil:
            dist[source] = 0.0
            hd[0] = 0.0; hn[0] = source; size = 1
            while size > 0:
                d = hd[0]; u = hn[0]
                size -= 1
                if size > 0:
                    td = hd[size]; tn = hn[size]
                    pos = 0
                    while True:
                        child = 2 * pos + 1
                        if child >= size:
                            break
                        if child + 1 < size and _less(hd[child + 1], hn[child + 1], hd[child], hn[child]):
                            child += 1
                        if _less(hd[child], hn[child], td, tn):
                            hd[pos] = hd[child]; hn[pos] = hn[child]
                            pos = child
                        else:
                            break
                    hd[pos] = td; hn[pos] = tn
                if done[u]:
                    continue
                done[u] = 1
                for k in range(indptr[u], indptr[u + 1]):
                    w = indices[k]
                    nd = d + weights[k]
                    if nd < dist[w]:
                        dist[w] = nd
                        pred[w] = u
                        pos = size
                        size += 1
                        while pos > 0:
                            parent = (pos - 1) // 2
                            if _less(nd, w, hd[parent], hn[parent]):
                                hd[pos] = hd[parent]; hn[pos] = hn[parent]
                                pos = parent
                            else:
                                break
                        hd[pos] = nd; hn[pos] = w
    finally:
        free(hd); free(hn)
    return dist_np, pred_np
