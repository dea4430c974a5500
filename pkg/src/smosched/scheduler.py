"""Chunk-to-neighbor scheduling.

Priorities combine deadline urgency with layer importance; the assignment
of missing chunks to neighbors is a generalized assignment problem solved
row by row (most reliable neighbor first, one knapsack per row).  Random,
local-rarest-first, round-robin and a LayerP2P-style scheduler serve as
baselines, and a brute-force oracle gives exact optima on small instances.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import kernels
from .stream import BufferMap, ChunkId

BASELINES = ("random", "lrf", "rr", "layerp2p")
SCHEDULERS = ("gap",) + BASELINES

ORACLE_MAX_CHUNKS = 12
ORACLE_MAX_NEIGHBORS = 5


class InstanceTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class PriorityParams:
    theta: float
    layers: int
    emergency_base: float = 10.0
    layer_base: float = 10.0

    def __post_init__(self):
        if self.theta <= 0:
            raise ValueError("theta must be positive")
        if self.emergency_base <= 1 or self.layer_base <= 1:
            raise ValueError("priority bases must exceed 1")
        if self.layers < 1:
            raise ValueError("layers must be >= 1")

    @classmethod
    def standard(cls, layers: int) -> "PriorityParams":
        """P_E(x) = 10^x, P_L(l) = 10^(L - l), theta = 10^-L."""
        return cls(10.0 ** -layers, layers)

    @classmethod
    def preset(cls, name: str, layers: int, horizon: int = 64) -> "PriorityParams":
        """Named behaviours; ``horizon`` is the farthest deadline distance in slots.

        ``layer-major`` requests every lower layer before any higher one,
        ``time-major`` orders by deadline first, ``standard`` uses the default
        constants (theta = 10^-L).
        """
        if name == "standard":
            return cls.standard(layers)
        if name == "layer-major":
            return cls(10.0, layers)
        if name == "time-major":
            return cls(10.0 ** -(layers + horizon + 1), layers)
        raise ValueError(f"unknown priority preset {name!r}")


def priority(chunk: ChunkId, now: int, params: PriorityParams,
             deadline: int | None = None) -> float:
    """P = eb^(now - D) + theta * lb^(L - L_j) with the 1-based layer L_j."""
    deadline = chunk.slot if deadline is None else deadline
    if deadline < now:
        raise ValueError(f"chunk {chunk} is past its deadline")
    urgency = params.emergency_base ** (now - deadline)
    return urgency + params.theta * params.layer_base ** (params.layers - (chunk.layer + 1))


def priorities(layers: np.ndarray, now: int, deadlines: np.ndarray,
               params: PriorityParams) -> np.ndarray:
    """Vectorised ``priority`` over arrays of layers and deadlines."""
    layers = np.asarray(layers)
    gap = now - np.asarray(deadlines, dtype=np.float64)
    if (gap > 0).any():
        raise ValueError("past-deadline chunks cannot be scored")
    return (np.power(params.emergency_base, gap)
            + params.theta * np.power(params.layer_base, params.layers - (layers + 1.0)))


@dataclass
class NeighborView:
    id: int
    buffer_map: BufferMap
    capacity: int
    reliability: float = 1.0

    def __post_init__(self):
        if self.capacity < 0:
            raise ValueError("capacity must be non-negative")
        if not 0.0 <= self.reliability <= 1.0:
            raise ValueError("reliability must lie in [0, 1]")


def row_order(ids, capacities, reliabilities) -> list[int]:
    """Reliability descending, then larger capacity, then lower id."""
    return sorted(range(len(ids)), key=lambda r: (-reliabilities[r], -capacities[r], ids[r]))


@dataclass
class AssignmentMatrix:
    """Rows are neighbors in processing order, columns are missing chunks.

    ``available[r, j]`` marks that neighbor ``neighbor_ids[r]`` advertises
    chunk ``columns[j]``; the entry value is ``priorities[j]``.
    """

    neighbor_ids: tuple
    slots: np.ndarray
    layers: np.ndarray
    available: np.ndarray
    priorities: np.ndarray
    capacities: np.ndarray
    reliabilities: np.ndarray

    @classmethod
    def from_columns(cls, neighbor_ids, columns, available, priorities, capacities,
                     reliabilities=None):
        cols = list(columns)
        n = len(neighbor_ids)
        return cls(tuple(neighbor_ids),
                   np.asarray([c.slot for c in cols], dtype=np.int64),
                   np.asarray([c.layer for c in cols], dtype=np.int64),
                   np.asarray(available, dtype=bool).reshape(n, len(cols)),
                   np.asarray(priorities, dtype=np.float64),
                   np.asarray(capacities, dtype=np.int64),
                   np.ones(n) if reliabilities is None else np.asarray(reliabilities, dtype=np.float64))

    @property
    def columns(self) -> list:
        return [ChunkId(s, l) for s, l in zip(self.slots.tolist(), self.layers.tolist())]

    @property
    def shape(self):
        return self.available.shape

    def entry(self, r: int, j: int):
        return float(self.priorities[j]) if self.available[r, j] else None

    def present(self) -> int:
        return int(self.available.sum())

    def unassignable(self) -> list:
        return [c for c, ok in zip(self.columns, self.available.any(axis=0)) if not ok]

    def tie_rank(self) -> np.ndarray:
        """Rank of each column under (layer, slot) order."""
        m = len(self.slots)
        rank = np.empty(m, dtype=np.int64)
        rank[np.lexsort((np.arange(m), self.slots, self.layers))] = np.arange(m)
        return rank

    def preference(self) -> np.ndarray:
        """Columns by priority descending, ties in (layer, slot) order."""
        return np.lexsort((self.tie_rank(), -self.priorities))


def build_matrix(missing: Sequence[ChunkId], neighbors: Sequence[NeighborView],
                 chunk_priorities) -> AssignmentMatrix:
    missing = list(missing)
    if isinstance(chunk_priorities, Mapping):
        pr = np.asarray([chunk_priorities[c] for c in missing], dtype=np.float64)
    else:
        pr = np.asarray(chunk_priorities, dtype=np.float64)
    ids = [n.id for n in neighbors]
    caps = [n.capacity for n in neighbors]
    rel = [n.reliability for n in neighbors]
    order = row_order(ids, caps, rel)
    avail = np.zeros((len(order), len(missing)), dtype=bool)
    for r, idx in enumerate(order):
        bmap = neighbors[idx].buffer_map
        for j, chunk in enumerate(missing):
            avail[r, j] = bmap.has(chunk)
    return AssignmentMatrix.from_columns(
        [ids[i] for i in order], missing, avail, pr,
        [caps[i] for i in order], [rel[i] for i in order])


@dataclass
class Schedule:
    """Chosen requests: ``assign[j]`` is the matrix row serving column j, or -1."""

    matrix: AssignmentMatrix
    assign: np.ndarray
    kind: str = "gap"

    @property
    def assignments(self) -> list:
        ids = self.matrix.neighbor_ids
        cols = self.matrix.columns
        return [(cols[j], ids[r]) for j, r in enumerate(self.assign.tolist()) if r >= 0]

    @property
    def unassigned(self) -> list:
        cols = self.matrix.columns
        return [cols[j] for j, r in enumerate(self.assign.tolist()) if r < 0]

    def __len__(self):
        return int((self.assign >= 0).sum())

    def load(self, weights=None) -> np.ndarray:
        """Assigned weight per matrix row."""
        n = self.matrix.shape[0]
        w = np.ones(len(self.assign), dtype=np.int64) if weights is None else np.asarray(weights)
        out = np.zeros(n, dtype=np.int64)
        mask = self.assign >= 0
        np.add.at(out, self.assign[mask], w[mask])
        return out

    def violations(self, capacities=None, weights=None) -> list[str]:
        """Broken capacity or availability constraints (empty when valid)."""
        caps = self.matrix.capacities if capacities is None else np.asarray(capacities)
        problems = []
        load = self.load(weights)
        for r in np.flatnonzero(load > caps):
            problems.append(f"neighbor {self.matrix.neighbor_ids[r]} over capacity")
        for j, r in enumerate(self.assign.tolist()):
            if r >= 0 and not self.matrix.available[r, j]:
                problems.append(f"{self.matrix.columns[j]} not held by {self.matrix.neighbor_ids[r]}")
        return problems


def aggregate_priority(schedule: Schedule, chunk_priorities=None) -> float:
    """Sum of priorities over assigned requests."""
    if chunk_priorities is None:
        pr = schedule.matrix.priorities
        return float(sum(pr[j] for j in np.flatnonzero(schedule.assign >= 0)))
    return float(sum(chunk_priorities[c] for c, _ in schedule.assignments))


def _inputs(matrix, capacities, weights):
    caps = matrix.capacities if capacities is None else np.asarray(capacities, dtype=np.int64)
    if (caps < 0).any():
        raise ValueError("negative capacity")
    m = len(matrix.slots)
    w = np.ones(m, dtype=np.int64) if weights is None else np.asarray(weights, dtype=np.int64)
    if (w < 1).any():
        raise ValueError("chunk weights must be >= 1")
    return caps, w


def gap_schedule(matrix: AssignmentMatrix, capacities=None, weights=None,
                 budget: int | None = None, augment: bool = True) -> Schedule:
    """Row-processing heuristic for the assignment problem.

    Rows are taken in order; each solves a knapsack over the chunks it holds
    that are still unassigned.  ``budget`` caps the total assigned weight
    (the receiver's own download allowance); when it binds, the chunks worth
    requesting are fixed first and only their placement is left to the rows.
    With ``augment`` a final pass places leftovers by moving one earlier
    request to a row with room (see ``augment_assignment``).
    """
    caps, w = _inputs(matrix, capacities, weights)
    tie = matrix.tie_rank()
    if budget is None:
        assign = np.asarray(kernels.gap_rows(matrix.available, matrix.priorities, w, tie, caps, -1),
                            dtype=np.int64)
        if augment:
            augment_assignment(matrix, assign, caps, w)
        return Schedule(matrix, assign, "gap")
    # With a binding budget the rows must not spend it on low-value chunks
    # while better ones wait for a later row: pick the best affordable chunks
    # first, spread them over the rows, then refill with what is left.
    avail = np.asarray(matrix.available, dtype=bool)
    assign = np.full(len(w), -1, dtype=np.int64)
    left_caps = caps.astype(np.int64).copy()
    left = int(budget)
    pref = matrix.preference()
    pending = pref[avail[:, pref].any(axis=0)]
    unit = bool((w == 1).all())
    while left > 0 and pending.size:
        if int(w[pending].sum()) <= left:
            chosen, rest = pending, pending[:0]
        elif unit:
            chosen, rest = pending[:left], pending[left:]
        else:
            fits = np.zeros(pending.size, dtype=bool)
            acc = 0
            for x, j in enumerate(pending.tolist()):
                if acc + w[j] <= left:
                    fits[x] = True
                    acc += w[j]
            chosen, rest = pending[fits], pending[~fits]
        cols = np.sort(chosen)
        sub = np.asarray(kernels.gap_rows(avail[:, cols], matrix.priorities[cols], w[cols],
                                          tie[cols], left_caps, left), dtype=np.int64)
        got = sub >= 0
        if not got.any():
            break
        assign[cols[got]] = sub[got]
        np.subtract.at(left_caps, sub[got], w[cols[got]])
        left -= int(w[cols[got]].sum())
        if not rest.size:
            break
        pending = rest[(avail[:, rest] & (left_caps > 0)[:, None]).any(axis=0)]
    if augment and left > 0:
        augment_assignment(matrix, assign, caps, w, left)
    return Schedule(matrix, assign, "gap")


def augment_assignment(matrix: AssignmentMatrix, assign: np.ndarray, caps, weights,
                       budget: int | None = None) -> np.ndarray:
    """Place unassigned chunks in preference order, in place.

    A leftover chunk goes to a holding row with room, or to a holding row
    that can pass one of its chunks on to another row with room.  Every
    step adds a chunk and removes none, so the aggregate priority never
    drops.  ``budget`` is the weight still allowed (None: unlimited).
    """
    avail = np.asarray(matrix.available, dtype=bool)
    w = np.asarray(weights, dtype=np.int64)
    spare = np.asarray(caps, dtype=np.int64).copy()
    taken = assign >= 0
    np.subtract.at(spare, assign[taken], w[taken])
    if not (spare > 0).any():
        return assign
    left = -1 if budget is None else int(budget)
    for j in matrix.preference().tolist():
        if left == 0:
            break
        if assign[j] >= 0 or (left > 0 and w[j] > left):
            continue
        rows = np.flatnonzero(avail[:, j])
        if not rows.size:
            continue
        direct = rows[spare[rows] >= w[j]]
        if direct.size:
            r = int(direct[0])
        else:
            r = -1
            for cand in rows.tolist():
                for j2 in np.flatnonzero(assign == cand).tolist():
                    if spare[cand] + w[j2] < w[j]:
                        continue
                    dest = np.flatnonzero(avail[:, j2] & (spare >= w[j2]))
                    dest = dest[dest != cand]
                    if dest.size:
                        r2 = int(dest[0])
                        assign[j2] = r2
                        spare[r2] -= w[j2]
                        spare[cand] += w[j2]
                        r = cand
                        break
                if r >= 0:
                    break
            if r < 0:
                continue
        assign[j] = r
        spare[r] -= w[j]
        if left > 0:
            left -= int(w[j])
        if not (spare > 0).any():
            break
    return assign


def oracle_schedule(matrix: AssignmentMatrix, capacities=None, weights=None) -> Schedule:
    """Exact optimum by exhaustive dynamic search (small instances only)."""
    n, m = matrix.shape
    if m > ORACLE_MAX_CHUNKS or n > ORACLE_MAX_NEIGHBORS:
        raise InstanceTooLarge(f"{n} neighbors x {m} chunks exceeds the exhaustive-search bound")
    caps, w = _inputs(matrix, capacities, weights)
    _, assign = kernels.oracle_assign(matrix.available, matrix.priorities, w, caps)
    return Schedule(matrix, np.asarray(assign, dtype=np.int64), "oracle")


# --------------------------------------------------------------------------
# baselines


class _Residual:
    def __init__(self, caps, weights, budget):
        self.left = caps.astype(np.int64).copy()
        self.w = weights
        self.budget = -1 if budget is None else int(budget)

    def room(self, j) -> bool:
        return self.budget < 0 or self.budget >= self.w[j]

    def capable(self, avail_col, j) -> np.ndarray:
        return np.flatnonzero(avail_col & (self.left >= self.w[j]))

    def take(self, r, j):
        self.left[r] -= self.w[j]
        if self.budget >= 0:
            self.budget -= self.w[j]


def _random_rule(matrix, order, res, assign, rng):
    for j in order:
        if not res.room(j):
            break
        rows = res.capable(matrix.available[:, j], j)
        if rows.size:
            r = int(rows[rng.integers(rows.size)]) if rows.size > 1 else int(rows[0])
            assign[j] = r
            res.take(r, j)


def baseline_schedule(kind: str, matrix: AssignmentMatrix, rng: np.random.Generator | None = None,
                      capacities=None, weights=None, budget: int | None = None,
                      threshold: int | None = None) -> Schedule:
    """Classic schedulers.

    random   : chunks by priority, each to a uniformly random capable neighbor.
    lrf      : rarest chunks first, each to the capable neighbor with most room.
    rr       : neighbors in id order take turns, each taking the next chunk it holds.
    layerp2p : layers <= threshold in random order by the random rule, then the
               higher layers one by one in ascending order.
    """
    if kind not in BASELINES:
        raise ValueError(f"unknown scheduler {kind!r}")
    caps, w = _inputs(matrix, capacities, weights)
    rng = np.random.default_rng(0) if rng is None else rng
    n, m = matrix.shape
    assign = np.full(m, -1, dtype=np.int64)
    res = _Residual(caps, w, budget)
    if m == 0 or n == 0:
        return Schedule(matrix, assign, kind)
    pref = matrix.preference()

    if kind == "random":
        _random_rule(matrix, pref, res, assign, rng)

    elif kind == "lrf":
        replicas = matrix.available.sum(axis=0)
        rank = np.empty(m, dtype=np.int64)
        rank[pref] = np.arange(m)
        for j in np.lexsort((rank, replicas)):
            if not res.room(j):
                break
            rows = res.capable(matrix.available[:, j], j)
            if rows.size:
                r = int(rows[np.argmax(res.left[rows])])
                assign[j] = r
                res.take(r, j)

    elif kind == "rr":
        turn = sorted(range(n), key=lambda r: matrix.neighbor_ids[r])
        queue = [j for j in pref]
        progress = True
        while progress and queue:
            progress = False
            for r in turn:
                if res.left[r] <= 0:
                    continue
                for pos, j in enumerate(queue):
                    if matrix.available[r, j] and res.left[r] >= w[j] and res.room(j):
                        assign[j] = r
                        res.take(r, j)
                        del queue[pos]
                        progress = True
                        break

    else:  # layerp2p
        lays = matrix.layers
        cut = -1 if threshold is None else threshold
        regular = np.flatnonzero(lays <= cut)
        regular = regular[rng.permutation(regular.size)]
        _random_rule(matrix, regular, res, assign, rng)
        slots = matrix.slots
        probing = np.flatnonzero(lays > cut)
        probing = probing[np.lexsort((slots[probing], lays[probing]))]
        _random_rule(matrix, probing, res, assign, rng)

    return Schedule(matrix, assign, kind)


def schedule(kind: str, matrix: AssignmentMatrix, rng=None, capacities=None, weights=None,
             budget=None, threshold=None) -> Schedule:
    if kind == "gap":
        return gap_schedule(matrix, capacities, weights, budget)
    if kind == "oracle":
        return oracle_schedule(matrix, capacities, weights)
    return baseline_schedule(kind, matrix, rng, capacities, weights, budget, threshold)


# --------------------------------------------------------------------------
# neighbor reliability


@dataclass
class ReliabilityTracker:
    """Fulfilled / issued requests per neighbor over the last ``history`` periods."""

    history: int = 10
    _periods: dict = field(default_factory=dict)

    def record(self, neighbor: int, issued: int, fulfilled: int) -> None:
        if fulfilled > issued:
            raise ValueError("more requests fulfilled than issued")
        q = self._periods.setdefault(neighbor, deque(maxlen=self.history))
        q.append((issued, fulfilled))

    def value(self, neighbor: int) -> float:
        q = self._periods.get(neighbor)
        if not q:
            return 1.0
        issued = sum(i for i, _ in q)
        return 1.0 if issued == 0 else sum(f for _, f in q) / issued

    def values(self, neighbors: Iterable[int]) -> list[float]:
        return [self.value(n) for n in neighbors]
