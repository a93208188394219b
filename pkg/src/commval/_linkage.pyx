# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled average-linkage merge loop. Semantics match ``_linkage_py``.

Each live slot caches the minimum of its row over later live slots, so the
global minimum and the first pair within ``eps`` of it come from a scan of
the cached minima instead of the full matrix.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()

cdef double INF = float("inf")


cdef inline double _row_min(double[:, ::1] d, cnp.int64_t[::1] alive, Py_ssize_t p, Py_ssize_t n_alive):
    cdef Py_ssize_t q
    cdef Py_ssize_t a = alive[p]
    cdef double best = INF
    cdef double v
    for q in range(p + 1, n_alive):
        v = d[a, alive[q]]
        if v < best:
            best = v
    return best


def average_linkage_merges(double[:, ::1] dist, Py_ssize_t n_clusters, double eps):
    cdef Py_ssize_t n = dist.shape[0]
    cdef Py_ssize_t n_merges = n - n_clusters
    cdef double[:, ::1] d = np.array(dist, dtype=np.float64, copy=True)
    cdef cnp.int64_t[::1] alive = np.arange(n, dtype=np.int64)
    cdef double[::1] size = np.ones(n, dtype=np.float64)
    cdef double[::1] rowmin = np.empty(n, dtype=np.float64)
    cdef cnp.uint8_t[::1] stale = np.zeros(n, dtype=np.uint8)
    cdef cnp.int64_t[:, ::1] pairs = np.empty((max(n_merges, 0), 2), dtype=np.int64)
    cdef double[::1] heights = np.empty(max(n_merges, 0), dtype=np.float64)

    cdef Py_ssize_t n_alive = n
    cdef Py_ssize_t step, p, q, a, m, bi, bj, ipos, jpos
    cdef double dmin, cut, v, sa, sb, old_i, old_j
    cdef bint found

    for p in range(n):
        rowmin[p] = _row_min(d, alive, p, n_alive)

    for step in range(n_merges):
        dmin = INF
        for p in range(n_alive):
            if rowmin[alive[p]] < dmin:
                dmin = rowmin[alive[p]]
        cut = dmin + eps
        found = False
        bi = bj = ipos = jpos = 0
        for p in range(n_alive):
            a = alive[p]
            if rowmin[a] > cut:
                continue
            for q in range(p + 1, n_alive):
                if d[a, alive[q]] <= cut:
                    bi = a
                    bj = alive[q]
                    ipos = p
                    jpos = q
                    found = True
                    break
            if found:
                break

        sa = size[bi]
        sb = size[bj]
        for p in range(n_alive):
            m = alive[p]
            if m == bi or m == bj:
                continue
            old_i = d[bi, m]
            old_j = d[bj, m]
            v = (sa * old_i + sb * old_j) / (sa + sb)
            d[bi, m] = v
            d[m, bi] = v
            if p < ipos:
                # row m holds both old entries; recompute if either was its minimum
                if old_i == rowmin[m] or old_j == rowmin[m]:
                    stale[m] = 1
                elif v < rowmin[m]:
                    rowmin[m] = v
            elif p < jpos:
                # row m holds the removed bj entry only
                if old_j == rowmin[m]:
                    stale[m] = 1
        size[bi] = sa + sb
        for p in range(jpos, n_alive - 1):
            alive[p] = alive[p + 1]
        n_alive -= 1
        for p in range(n_alive):
            m = alive[p]
            if m == bi or stale[m]:
                rowmin[m] = _row_min(d, alive, p, n_alive)
                stale[m] = 0

        pairs[step, 0] = bi
        pairs[step, 1] = bj
        heights[step] = dmin

    return np.asarray(pairs), np.asarray(heights)
