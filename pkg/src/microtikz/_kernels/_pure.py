"""Pure-Python twins of the compiled kernels (same algorithm, same results)."""

import numpy as np

BACKEND = "pure"

_INF = float("inf")


def solve_assignment(cost):
    """Exact min-cost assignment on a square matrix.

    Shortest-augmenting-path method with row/column potentials. Returns
    ``(col_of_row, total_cost)`` where ``col_of_row[i]`` is the column
    assigned to row ``i``.
    """
    cost = np.asarray(cost, dtype=np.float64)
    n = cost.shape[0]
    if cost.ndim != 2 or cost.shape[1] != n:
        raise ValueError("solve_assignment expects a square matrix")
    a = cost.tolist()
    u = [0.0] * (n + 1)
    v = [0.0] * (n + 1)
    p = [0] * (n + 1)  # p[j]: row matched to column j (1-based, 0 = free)
    way = [0] * (n + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [_INF] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = _INF
            j1 = 0
            row = a[i0 - 1]
            ui0 = u[i0]
            for j in range(1, n + 1):
                if not used[j]:
                    cur = row[j - 1] - ui0 - v[j]
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
    for j in range(1, n + 1):
        col_of_row[p[j] - 1] = j - 1
    total = float(sum(a[i][col_of_row[i]] for i in range(n)))
    return col_of_row, total


def levenshtein(a, b):
    """Token-level edit distance between two int sequences."""
    a = list(a)
    b = list(b)
    if len(a) < len(b):
        a, b = b, a
    m = len(b)
    prev = list(range(m + 1))
    cur = [0] * (m + 1)
    for i, ca in enumerate(a, start=1):
        cur[0] = i
        for j in range(1, m + 1):
            sub = prev[j - 1] + (0 if ca == b[j - 1] else 1)
            dele = prev[j] + 1
            ins = cur[j - 1] + 1
            best = sub if sub < dele else dele
            cur[j] = best if best < ins else ins
        prev, cur = cur, prev
    return prev[m]
