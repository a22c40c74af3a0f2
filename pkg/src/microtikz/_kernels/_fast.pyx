# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: exact assignment solve and token edit distance.

Mirrors ``_pure`` operation for operation so both backends return
identical results.
"""

import numpy as np

BACKEND = "fast"

cdef double _INF = float("inf")


def solve_assignment(cost):
    """Exact min-cost assignment on a square matrix.

    Shortest-augmenting-path method with row/column potentials. Returns
    ``(col_of_row, total_cost)``.
    """
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError("solve_assignment expects a square matrix")
    cdef double[:, :] a = cost
    cdef Py_ssize_t n = a.shape[0]
    cdef double[:] u = np.zeros(n + 1)
    cdef double[:] v = np.zeros(n + 1)
    cdef long[:] p = np.zeros(n + 1, dtype=np.int64)
    cdef long[:] way = np.zeros(n + 1, dtype=np.int64)
    cdef double[:] minv = np.empty(n + 1)
    cdef unsigned char[:] used = np.zeros(n + 1, dtype=np.uint8)
    cdef Py_ssize_t i, j, j0, j1, i0
    cdef double cur, delta, ui0
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        for j in range(n + 1):
            minv[j] = _INF
            used[j] = 0
        while True:
            used[j0] = 1
            i0 = p[j0]
            delta = _INF
            j1 = 0
            ui0 = u[i0]
            for j in range(1, n + 1):
                if not used[j]:
                    cur = a[i0 - 1, j - 1] - ui0 - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    col_of_row = np.empty(n, dtype=np.int64)
    cdef long[:] cov = col_of_row
    for j in range(1, n + 1):
        cov[p[j] - 1] = j - 1
    cdef double total = 0.0
    for i in range(n):
        total += a[i, cov[i]]
    return col_of_row, total


def levenshtein(a, b):
    """Token-level edit distance between two int sequences."""
    a = np.ascontiguousarray(a, dtype=np.int64)
    b = np.ascontiguousarray(b, dtype=np.int64)
    if a.shape[0] < b.shape[0]:
        a, b = b, a
    cdef long[:] av = a
    cdef long[:] bv = b
    cdef Py_ssize_t la = av.shape[0], m = bv.shape[0]
    cdef long[:] prev = np.arange(m + 1, dtype=np.int64)
    cdef long[:] cur = np.zeros(m + 1, dtype=np.int64)
    cdef long[:] tmp
    cdef Py_ssize_t i, j
    cdef long sub, dele, ins, best, ca
    for i in range(1, la + 1):
        cur[0] = i
        ca = av[i - 1]
        for j in range(1, m + 1):
            sub = prev[j - 1] + (0 if ca == bv[j - 1] else 1)
            dele = prev[j] + 1
            ins = cur[j - 1] + 1
            best = sub if sub < dele else dele
            cur[j] = best if best < ins else ins
        tmp = prev
        prev = cur
        cur = tmp
    return int(prev[m])
