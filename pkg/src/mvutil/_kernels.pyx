# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops; ``_kernels_py`` holds the reference versions."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, pow, INFINITY, isfinite

cnp.import_array()


cdef inline Py_ssize_t _search_left(const double[:] a, double v) noexcept nogil:
    cdef Py_ssize_t lo = 0, hi = a.shape[0], mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if a[mid] < v:
            lo = mid + 1
        else:
            hi = mid
    return lo


def select_eval(double[:] y, const double[:] breaks, const double[:] lo_at, const double[:] hi_at,
                const double[:] cvals, const double[:] shift, const double[:] scale, const double[:] expo,
                double at_zero, double at_inf, int which, double tol):
    cdef Py_ssize_t m = y.shape[0], n = breaks.shape[0], q, i, hit
    cdef double v
    out = np.empty(m)
    cdef double[:] o = out
    cdef const double[:] vals = lo_at if which == 0 else hi_at
    with nogil:
        for q in range(m):
            v = y[q]
            if v == 0.0:
                o[q] = at_zero
                continue
            if v == INFINITY:
                o[q] = at_inf
                continue
            i = _search_left(breaks, v)
            hit = -1
            if i > 0 and fabs(v - breaks[i - 1]) <= tol:
                hit = i - 1
            if i < n and fabs(breaks[i] - v) <= tol:
                hit = i
            if hit >= 0:
                o[q] = vals[hit]
            elif expo[i] == 0.0:
                o[q] = cvals[i]
            else:
                o[q] = shift[i] + pow(scale[i] / v, expo[i])
    return out


def chord_sup(const double[:] xs, const double[:] us, const double[:] xq):
    cdef Py_ssize_t n = xs.shape[0], nq = xq.shape[0], q, a, c, r0, lo, hi, mid
    cdef double x, best, w, ch
    out = np.empty(nq)
    cdef double[:] o = out
    with nogil:
        for q in range(nq):
            x = xq[q]
            best = -INFINITY
            # first grid index with xs >= x
            lo = 0
            hi = n
            while lo < hi:
                mid = (lo + hi) // 2
                if xs[mid] < x:
                    lo = mid + 1
                else:
                    hi = mid
            r0 = lo
            for a in range(n):
                if xs[a] > x:
                    break
                if not isfinite(us[a]):
                    continue
                for c in range(r0 if r0 > a else a, n):
                    w = xs[c] - xs[a]
                    if w > 0:
                        ch = ((x - xs[a]) * us[c] + (xs[c] - x) * us[a]) / w
                    elif xs[a] == x:
                        ch = us[a]
                    else:
                        continue
                    if ch > best:
                        best = ch
            o[q] = best
    return out


def lagrangian_argmax(const double[:, :] values, const double[:, :] costs, double lam):
    cdef Py_ssize_t m = values.shape[0], g = values.shape[1], i, j, arg
    cdef double best, v, tol, bc
    out = np.empty(m, dtype=np.int64)
    cdef long long[:] o = out
    with nogil:
        for i in range(m):
            best = -INFINITY
            for j in range(g):
                v = values[i, j] - lam * costs[i, j]
                if v > best:
                    best = v
            tol = 1e-12 * (fabs(best) if fabs(best) > 1.0 else 1.0)
            arg = -1
            bc = INFINITY
            for j in range(g):
                v = values[i, j] - lam * costs[i, j]
                if v >= best - tol and costs[i, j] < bc:
                    bc = costs[i, j]
                    arg = j
            o[i] = arg
    return out


def enumerate_best(values, costs, double budget, double tol):
    cdef double[:, :] V = np.ascontiguousarray(values, dtype=float)
    cdef double[:, :] C = np.ascontiguousarray(costs, dtype=float)
    cdef Py_ssize_t m = V.shape[0], g = V.shape[1], i, j
    tail_np = np.zeros(m + 1)
    cdef double[:] tail = tail_np
    cdef double mn
    for i in range(m - 1, -1, -1):
        mn = INFINITY
        for j in range(g):
            if C[i, j] < mn:
                mn = C[i, j]
        tail[i] = tail[i + 1] + mn
    cols_np = np.zeros(m, dtype=np.int64)
    best_np = np.full(m, -1, dtype=np.int64)
    cost_np = np.zeros(m + 1)
    val_np = np.zeros(m + 1)
    cdef long long[:] cols = cols_np
    cdef long long[:] bestc = best_np
    cdef double[:] cost = cost_np
    cdef double[:] val = val_np
    cdef double best = -INFINITY
    cdef bint found = False
    cdef Py_ssize_t depth = 0
    cdef double cc
    # iterative depth-first search; cols[depth] is the next column to try
    with nogil:
        cols[0] = 0
        while depth >= 0:
            if depth == m:
                if val[m] > best:
                    best = val[m]
                    found = True
                    for i in range(m):
                        bestc[i] = cols[i] - 1
                depth -= 1
                continue
            j = cols[depth]
            if j >= g:
                depth -= 1
                continue
            cols[depth] = j + 1
            cc = cost[depth] + C[depth, j]
            if cc + tail[depth + 1] > budget + tol:
                continue
            cost[depth + 1] = cc
            val[depth + 1] = val[depth] + V[depth, j]
            depth += 1
            if depth < m:
                cols[depth] = 0
    if not found:
        return best, None
    return best, best_np
