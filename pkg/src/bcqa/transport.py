"""Exact discrete optimal transport between two uniform distributions.

Solved as an integer min-cost flow by successive shortest paths with
Johnson potentials: uniform masses 1/n and 1/m are scaled by L = lcm(n, m)
to integer supplies L/n and L/m, so the optimum is found exactly.
"""

from __future__ import annotations

import math

import numpy as np


def uniform_transport(cost: np.ndarray, row_counts=None, col_counts=None) -> tuple[float, np.ndarray]:
    """Minimal cost of moving mass 1/n from each row to 1/m at each column.

    ``cost`` must be an (n, m) array of non-negative finite values. Optional
    integer ``row_counts`` / ``col_counts`` give each row/column a multiplicity,
    i.e. mass count/sum(counts), which is how repeated items are collapsed.
    Returns the optimal cost and the transport plan.
    """
    C = np.asarray(cost, dtype=float)
    if C.ndim != 2 or C.shape[0] == 0 or C.shape[1] == 0:
        raise ValueError(f"cost must be a non-empty 2-d array, got shape {C.shape}")
    if not np.all(np.isfinite(C)) or np.any(C < 0):
        raise ValueError("cost entries must be finite and non-negative")
    rc = np.ones(C.shape[0], dtype=np.int64) if row_counts is None else np.asarray(row_counts, dtype=np.int64)
    cc = np.ones(C.shape[1], dtype=np.int64) if col_counts is None else np.asarray(col_counts, dtype=np.int64)
    if rc.shape != (C.shape[0],) or cc.shape != (C.shape[1],) or rc.min() < 1 or cc.min() < 1:
        raise ValueError("counts must be positive integers, one per row/column")
    n, m = int(rc.sum()), int(cc.sum())
    L = math.lcm(n, m)
    flow = _min_cost_flow(C, rc * (L // n), cc * (L // m))
    return float((flow * C).sum() / L), flow / L


def _min_cost_flow(C: np.ndarray, supply: np.ndarray, demand: np.ndarray) -> np.ndarray:
    n, m = C.shape
    # node numbering: 0 = source, 1..n rows, n+1..n+m cols, n+m+1 = sink
    V = n + m + 2
    S, T = 0, n + m + 1
    flow = np.zeros((n, m), dtype=np.int64)
    sent = np.zeros(n, dtype=np.int64)
    recv = np.zeros(m, dtype=np.int64)
    pot = np.zeros(V)
    total = int(supply.sum())

    while sent.sum() < total:
        dist = np.full(V, np.inf)
        prev = np.full(V, -1, dtype=np.int64)
        done = np.zeros(V, dtype=bool)
        dist[S] = 0.0
        while True:
            masked = np.where(done, np.inf, dist)
            u = int(np.argmin(masked))
            du = masked[u]
            if not np.isfinite(du):
                break
            done[u] = True
            if u == T:
                break
            if u == S:
                cand = np.flatnonzero(sent < supply) + 1
                w = np.zeros(len(cand))
            elif u <= n:
                i = u - 1
                cand = np.arange(n + 1, n + m + 1)
                w = C[i]
            else:
                j = u - n - 1
                back = np.flatnonzero(flow[:, j] > 0)
                cand = back + 1
                w = -C[back, j]
                if recv[j] < demand[j]:
                    cand = np.append(cand, T)
                    w = np.append(w, 0.0)
            if len(cand) == 0:
                continue
            # reduced costs are >= 0 up to rounding; clamp the noise
            nd = du + np.maximum(w + pot[u] - pot[cand], 0.0)
            better = (nd < dist[cand]) & ~done[cand]
            dist[cand[better]] = nd[better]
            prev[cand[better]] = u
        if not np.isfinite(dist[T]):
            raise RuntimeError("transport problem became infeasible")

        # early exit: nodes not settled before the sink get dist[T]
        pot += np.minimum(dist, dist[T])

        path = [T]
        while path[-1] != S:
            path.append(int(prev[path[-1]]))
        path.reverse()
        push = None
        for a, b in zip(path, path[1:]):
            if a == S:
                cap = supply[b - 1] - sent[b - 1]
            elif b == T:
                cap = demand[a - n - 1] - recv[a - n - 1]
            elif a <= n:
                cap = None  # row -> col is uncapacitated
            else:
                cap = flow[b - 1, a - n - 1]
            if cap is not None:
                push = cap if push is None else min(push, cap)
        push = int(push)
        for a, b in zip(path, path[1:]):
            if a == S:
                sent[b - 1] += push
            elif b == T:
                recv[a - n - 1] += push
            elif a <= n:
                flow[a - 1, b - n - 1] += push
            else:
                flow[b - 1, a - n - 1] -= push
    return flow
