"""Pure-Python scheduling kernels.

Reference versions of the routines in ``_ckernels.pyx``; both must return
identical results for identical inputs.  Items handed to ``knapsack_select``
are assumed to be in preference order already.
"""
from functools import lru_cache

import numpy as np

TIE_TOL = 1e-12


def _prefer_take(take, skip):
    return take >= skip - TIE_TOL * max(1.0, abs(skip))


def knapsack_select(values, weights, capacity):
    """0/1 knapsack; among optimal sets prefer items that come first.

    Returns the chosen positions in ascending order.
    """
    n = len(values)
    values = [float(v) for v in values]
    weights = [int(w) for w in weights]
    cap = int(capacity)
    if n == 0 or cap <= 0:
        return np.zeros(0, dtype=np.int64)
    best = [[0.0] * (cap + 1) for _ in range(n + 1)]
    for i in range(n - 1, -1, -1):
        row, nxt = best[i], best[i + 1]
        v, w = values[i], weights[i]
        for c in range(cap + 1):
            skip = nxt[c]
            if w <= c:
                take = v + nxt[c - w]
                row[c] = take if _prefer_take(take, skip) else skip
            else:
                row[c] = skip
    chosen = []
    c = cap
    for i in range(n):
        w = weights[i]
        if w <= c and _prefer_take(values[i] + best[i + 1][c - w], best[i + 1][c]):
            chosen.append(i)
            c -= w
    return np.asarray(chosen, dtype=np.int64)


def _row_order(cands, values, scarcity, tie_rank):
    return sorted(cands, key=lambda j: (-values[j], scarcity[j], tie_rank[j]))


def gap_rows(avail, values, weights, tie_rank, caps, budget=-1):
    """Row-by-row assignment: each row packs its best still-unassigned chunks.

    ``avail`` is rows x chunks (rows already in processing order).  Among
    equal-valued chunks a row prefers those fewer later rows could serve,
    then lower ``tie_rank``.  ``budget`` bounds the total assigned weight
    (-1 for none).  Returns the row index per chunk, -1 when unassigned.
    """
    avail = np.asarray(avail, dtype=bool)
    n_rows, m = avail.shape
    values = [float(v) for v in values]
    weights = [int(w) for w in weights]
    tie_rank = [int(t) for t in tie_rank]
    caps = [int(c) for c in caps]
    assign = np.full(m, -1, dtype=np.int64)
    if m == 0:
        return assign
    live = np.asarray([c > 0 for c in caps], dtype=bool)
    # scarcity[r][j]: later rows with capacity that also hold chunk j
    later = np.zeros((n_rows + 1, m), dtype=np.int64)
    for r in range(n_rows - 1, -1, -1):
        later[r] = later[r + 1] + (avail[r] & live[r])
    unit = all(w == 1 for w in weights)
    remaining = budget
    for r in range(n_rows):
        room = caps[r] if remaining < 0 else min(caps[r], remaining)
        if room <= 0:
            continue
        cands = [j for j in range(m) if avail[r, j] and assign[j] < 0]
        if not cands:
            continue
        scarcity = later[r + 1].tolist()
        order = _row_order(cands, values, scarcity, tie_rank)
        if unit:
            picked = order[:room]
        else:
            pos = knapsack_select([values[j] for j in order], [weights[j] for j in order], room)
            picked = [order[p] for p in pos]
        for j in picked:
            assign[j] = r
            if remaining >= 0:
                remaining -= weights[j]
    return assign


def oracle_assign(avail, values, weights, caps):
    """Exact maximum of the assigned value under capacity and single-source rules.

    Among optimal assignments returns the lexicographically smallest one,
    reading chunks in column order and coding unassigned as ``n_rows``.
    """
    avail = np.asarray(avail, dtype=bool)
    n_rows, m = avail.shape
    values = [float(v) for v in values]
    weights = [int(w) for w in weights]
    caps = list(caps)
    caps = tuple(
        max(0, min(int(caps[r]), sum(weights[j] for j in range(m) if avail[r, j])))
        for r in range(n_rows))
    rows_of = [[r for r in range(n_rows) if avail[r, j]] for j in range(m)]

    @lru_cache(maxsize=None)
    def best(j, state):
        if j == m:
            return 0.0
        out = best(j + 1, state)
        w = weights[j]
        for r in rows_of[j]:
            if state[r] >= w:
                nxt = state[:r] + (state[r] - w,) + state[r + 1:]
                out = max(out, values[j] + best(j + 1, nxt))
        return out

    total = best(0, caps)
    assign = np.full(m, -1, dtype=np.int64)
    state = caps
    for j in range(m):
        target = best(j, state)
        w = weights[j]
        for r in rows_of[j]:
            if state[r] >= w:
                nxt = state[:r] + (state[r] - w,) + state[r + 1:]
                if _close(values[j] + best(j + 1, nxt), target):
                    assign[j] = r
                    state = nxt
                    break
    best.cache_clear()
    return total, assign


def _close(a, b):
    return abs(a - b) <= TIE_TOL * max(1.0, abs(b))
