"""Exact earth mover's distance over patch embeddings, and derived rewards.

The cost matrix is cosine-based: ``cos_dist`` (1 - cos, the default reward
orientation) or ``cos_sim`` (the similarity matrix as printed in the
transport formulation; exposed because the two readings disagree and both
are useful). Marginals are uniform: row sums 1/|x|, column sums 1/|y|.

Balanced problems (|x| == |y|) reduce to a min-cost assignment (the optimal
flow is a permutation matrix scaled by 1/n) and are solved by the compiled
assignment kernel. Unbalanced problems run an exact transportation simplex
on the integer-scaled problem with rational (Fraction) pivoting, so the
optimum is exact at desk sizes.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np

from ._kernels import solve_assignment
from .errors import ContractError, DegenerateInputError, GenerationError

MODES = ("cos_dist", "cos_sim")


def cost_matrix(x: np.ndarray, y: np.ndarray, mode: str = "cos_dist") -> np.ndarray:
    """Pairwise cosine cost between two embedding sets (n,d) x (m,d)."""
    if mode not in MODES:
        raise ContractError(f"mode must be one of {MODES}")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
        raise ContractError("embeddings must be (n,d) and (m,d) with equal d")
    if x.shape[0] == 0 or y.shape[0] == 0:
        raise ContractError("embeddings must be non-empty")
    nx = np.linalg.norm(x, axis=1)
    ny = np.linalg.norm(y, axis=1)
    if np.any(nx < 1e-12) or np.any(ny < 1e-12):
        raise DegenerateInputError("zero-norm embedding in cosine mode")
    sims = (x / nx[:, None]) @ (y / ny[:, None]).T
    return sims if mode == "cos_sim" else 1.0 - sims


def _transport_simplex(cost: np.ndarray):
    """Exact transportation plan for uniform marginals via rational pivoting.

    Works on the integer-scaled problem (row supply m units, column demand
    n units, unit mass 1/(n*m)). Bland's rule on entering and leaving
    variables guarantees termination under degeneracy.
    """
    n, m = cost.shape
    frac_cost = [[Fraction(cost[i, j]) for j in range(m)] for i in range(n)]
    supply = [m] * n
    demand = [n] * m

    # Northwest-corner start; zero allocations keep the basis at n+m-1 cells.
    alloc = {}
    i = j = 0
    while True:
        q = min(supply[i], demand[j])
        alloc[(i, j)] = q
        supply[i] -= q
        demand[j] -= q
        if i == n - 1 and j == m - 1:
            break
        if supply[i] == 0 and i + 1 < n:
            i += 1
        else:
            j += 1

    def potentials():
        u = [None] * n
        v = [None] * m
        rows_of_col = [[] for _ in range(m)]
        cols_of_row = [[] for _ in range(n)]
        for (bi, bj) in alloc:
            cols_of_row[bi].append(bj)
            rows_of_col[bj].append(bi)
        u[0] = Fraction(0)
        stack = [("r", 0)]
        while stack:
            kind, idx = stack.pop()
            if kind == "r":
                for bj in cols_of_row[idx]:
                    if v[bj] is None:
                        v[bj] = frac_cost[idx][bj] - u[idx]
                        stack.append(("c", bj))
            else:
                for bi in rows_of_col[idx]:
                    if u[bi] is None:
                        u[bi] = frac_cost[bi][idx] - v[idx]
                        stack.append(("r", bi))
        return u, v

    def find_cycle(ei, ej):
        # Path from column node ej back to row node ei through the basis tree.
        adj = {}
        for (bi, bj) in alloc:
            adj.setdefault(("r", bi), []).append(("c", bj))
            adj.setdefault(("c", bj), []).append(("r", bi))
        start, goal = ("c", ej), ("r", ei)
        parent = {start: None}
        stack = [start]
        while stack:
            node = stack.pop()
            if node == goal:
                break
            for nxt in adj.get(node, ()):
                if nxt not in parent:
                    parent[nxt] = node
                    stack.append(nxt)
        path = [goal]
        while path[-1] != start:
            path.append(parent[path[-1]])
        # path: row ei ... col ej; edges along it alternate -, +, ... relative
        # to the entering +(ei, ej).
        cells = []
        for a, b in zip(path[:-1], path[1:]):
            cell = (a[1], b[1]) if a[0] == "r" else (b[1], a[1])
            cells.append(cell)
        return cells

    while True:
        u, v = potentials()
        entering = None
        for bi in range(n):
            for bj in range(m):
                if (bi, bj) not in alloc and frac_cost[bi][bj] - u[bi] - v[bj] < 0:
                    entering = (bi, bj)
                    break
            if entering:
                break
        if entering is None:
            break
        path_cells = find_cycle(*entering)
        minus_cells = path_cells[0::2]
        theta = min(alloc[c] for c in minus_cells)
        leaving = min(c for c in minus_cells if alloc[c] == theta)
        for idx, c in enumerate(path_cells):
            alloc[c] += theta if idx % 2 else -theta
        alloc[entering] = alloc.get(entering, 0) + theta
        del alloc[leaving]

    flow = np.zeros((n, m))
    for (bi, bj), q in alloc.items():
        flow[bi, bj] = q / (n * m)
    value = sum(Fraction(q, n * m) * frac_cost[bi][bj] for (bi, bj), q in alloc.items() if q)
    return float(value), flow


def emd(x: np.ndarray, y: np.ndarray, mode: str = "cos_dist"):
    """Exact EMD between two uniformly weighted embedding sets.

    Returns (value, flow). The flow satisfies row sums 1/|x| and column
    sums 1/|y|; the value is sum(F*D)/sum(F) at the optimum.
    """
    d = cost_matrix(x, y, mode)
    n, m = d.shape
    if n == m:
        col_of_row, total = solve_assignment(d)
        flow = np.zeros((n, n))
        flow[np.arange(n), col_of_row] = 1.0 / n
        return total / n, flow
    return _transport_simplex(d)


def reward_emd(input_image: np.ndarray, candidate_program, encode_fn):
    """Similarity-oriented EMD reward: 1 - EMD(enc(input), enc(render), cos_dist).

    Returns (score, compiled). Uncompilable candidates score 0 with the
    flag cleared.
    """
    from . import dsl
    from .errors import DslSyntaxError

    try:
        rendered = dsl.rasterize(candidate_program)
    except DslSyntaxError:
        return 0.0, False
    value, _ = emd(encode_fn(input_image), encode_fn(rendered), "cos_dist")
    return 1.0 - value, True


def reward_cos(input_image: np.ndarray, candidate_program, encode_fn):
    """Cosine of mean-pooled patch embeddings; the baseline reward.

    Returns (score, compiled).
    """
    from . import dsl
    from .errors import DslSyntaxError

    try:
        rendered = dsl.rasterize(candidate_program)
    except DslSyntaxError:
        return 0.0, False
    a = np.asarray(encode_fn(input_image), dtype=np.float64).mean(axis=0)
    b = np.asarray(encode_fn(rendered), dtype=np.float64).mean(axis=0)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < 1e-12 or nb < 1e-12:
        raise DegenerateInputError("pooled embedding has zero norm")
    return float(a @ b / (na * nb)), True


def rerank_best_of_n(n: int, sampler, reward):
    """Sample n candidates and return (best program, its score, sample index).

    ``sampler(i)`` yields candidate i; ``reward(program)`` returns
    (score, compiled). Ties break toward the earliest sample. Raises
    :class:`GenerationError` when no candidate compiles.
    """
    if n < 1:
        raise ContractError(f"n must be >= 1, got {n}")
    best = None
    failures = []
    for i in range(n):
        program = sampler(i)
        score, ok = reward(program)
        if not ok:
            failures.append(i)
            continue
        if best is None or score > best[1]:
            best = (program, score, i)
    if best is None:
        raise GenerationError(f"all {n} candidates failed to compile (indices {failures})")
    return best
