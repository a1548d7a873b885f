"""Exact maximum-weight bipartite matching via shortest augmenting paths.

The matcher maximizes the total weight of a (not necessarily perfect)
matching: edges with nonpositive weight are never matched, so leaving a
vertex exposed is always allowed.  Ties are resolved deterministically by
scan order (lowest row, then lowest column).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Matching:
    pairs: list[tuple[int, int]]  # (row, col), sorted by row
    total: float


def _solve_square_min(cost: np.ndarray) -> np.ndarray:
    """Minimum-cost perfect assignment on a square matrix.

    Shortest-augmenting-path algorithm with dual potentials (Kuhn-Munkres
    family), O(n^3).  Returns row4col: for each column, the assigned row.
    """
    n = cost.shape[0]
    u = np.zeros(n)
    v = np.zeros(n)
    row4col = np.full(n, -1, dtype=np.int64)
    col4row = np.full(n, -1, dtype=np.int64)

    for cur_row in range(n):
        shortest = np.full(n, np.inf)
        path = np.full(n, -1, dtype=np.int64)
        done = np.zeros(n, dtype=bool)
        visited_rows = []
        min_val = 0.0
        i = cur_row
        sink = -1
        while sink == -1:
            visited_rows.append(i)
            remaining = ~done
            reduced = min_val + cost[i, remaining] - u[i] - v[remaining]
            idx_rem = np.flatnonzero(remaining)
            better = reduced < shortest[idx_rem]
            shortest[idx_rem[better]] = reduced[better]
            path[idx_rem[better]] = i
            j = idx_rem[np.argmin(shortest[idx_rem])]
            min_val = shortest[j]
            done[j] = True
            if row4col[j] == -1:
                sink = j
            else:
                i = row4col[j]
        u[cur_row] += min_val
        for r in visited_rows:
            if r != cur_row:
                u[r] += min_val - shortest[col4row[r]]
        scanned = done.copy()
        scanned[sink] = False
        v[scanned] -= min_val - shortest[scanned]
        v[sink] -= 0.0
        j = sink
        while True:
            i = path[j]
            row4col[j] = i
            col4row[i], j = j, col4row[i]
            if i == cur_row:
                break
    return row4col


def max_weight_matching(weights: np.ndarray) -> Matching:
    """Maximum-total-weight matching of a dense bipartite weight matrix.

    Rows and columns may stay unmatched; edges of weight <= 0 are dropped
    from the result (matching them can never increase the total).
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 2:
        raise ValueError("weights must be a 2-D matrix")
    if w.size == 0:
        return Matching([], 0.0)
    if not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite")
    n, m = w.shape
    size = max(n, m)
    # Pad to square with zero-profit cells; minimize negated clipped profit.
    profit = np.zeros((size, size))
    profit[:n, :m] = np.maximum(w, 0.0)
    row4col = _solve_square_min(-profit)
    pairs = []
    for j in range(m):
        i = int(row4col[j])
        if i < n and w[i, j] > 0.0:
            pairs.append((i, j))
    pairs.sort()
    total = float(sum(w[i, j] for i, j in pairs))
    return Matching(pairs, total)
