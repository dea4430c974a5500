"""Discrete-time mesh/pull overlay simulator.

Peer 0 is the source and holds every chunk; receivers pull missing chunks
from neighbors.  One clock slot lasts one chunk duration.  Each slot runs,
in order: buffer-map gossip, quality selection for stream slots entering
the urgent interval, request scheduling, FCFS serving at the senders, and
playback.  Receivers join at wall slot 0 with an empty buffer: their stream
clock is ``now = w - urgent_len``, so stream slot 0 enters the urgent
interval at wall slot 1 and is played at wall slot ``playing_len + urgent_len``.
"""
from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from . import metrics as mx
from .forecast import BandwidthTrace, ForecastConfig
from .scheduler import (SCHEDULERS, AssignmentMatrix, PriorityParams, baseline_schedule,
                        gap_schedule, priorities)
from .smoother import STRATEGIES, Smoother
from .stream import NOT_RECEIVED, SlidingWindow, VideoProfile, max_sustainable_quality

SOURCE = 0
CAPACITY_MODELS = ("residual", "share", "link")


class OverlayError(ValueError):
    pass


@dataclass(frozen=True)
class OverlayConfig:
    """Topology and bandwidth setup.

    ``classes`` is a tuple of (share, download kbps); when empty, downloads
    are drawn uniformly from ``download_range``.  Every ``change_interval``
    slots each receiver's capacities are rescaled by a factor drawn from
    ``change_range`` (0 disables changes); uniform downloads never exceed
    the top of ``download_range``.  With ``trace`` set, every
    receiver's download follows it instead.
    """

    receivers: int = 50
    degree: int = 8
    classes: tuple = ()
    download_range: tuple = (512.0, 2000.0)
    upload_ratio: float = 0.5
    source_upload: float = 5000.0
    change_interval: int = 0
    change_range: tuple = (0.2, 1.2)
    delay: int = 0
    gossip_period: int = 1
    scheduling_period: int = 1
    max_degree: int = 30
    trace: BandwidthTrace | None = None

    def __post_init__(self):
        if self.receivers < 1:
            raise OverlayError("need at least one receiver")
        if self.classes:
            total = sum(s for s, _ in self.classes)
            if abs(total - 1.0) > 1e-9:
                raise OverlayError(f"class shares sum to {total}, not 1")
        if self.gossip_period < 1 or self.scheduling_period < 1:
            raise OverlayError("gossip and scheduling periods must be >= 1 slot")
        if self.delay < 0:
            raise OverlayError("negative link delay")
        lo, hi = self.change_range
        if not 0 < lo <= hi:
            raise OverlayError("change_range must satisfy 0 < lo <= hi")


@dataclass
class PeerSpec:
    id: int
    download: np.ndarray  # kbps per clock slot
    upload: np.ndarray
    neighbors: tuple
    role: str = "receiver"


@dataclass
class Overlay:
    peers: list
    edges: list

    @property
    def size(self) -> int:
        return len(self.peers)

    def degree(self, peer: int) -> int:
        return len(self.peers[peer].neighbors)

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            for u, v in self.edges:
                fh.write(f"{u} {v}\n")


def class_counts(shares, n: int) -> list[int]:
    """Largest-remainder apportionment of ``n`` peers to class shares."""
    raw = [s * n for s in shares]
    counts = [int(np.floor(r)) for r in raw]
    order = sorted(range(len(shares)), key=lambda c: (-(raw[c] - counts[c]), c))
    for c in order[: n - sum(counts)]:
        counts[c] += 1
    return counts


def build_graph(nodes: int, degree: int, rng: np.random.Generator, max_degree: int = 30) -> list:
    """Random spanning tree plus random extra edges toward ``degree`` per node."""
    if nodes < 2:
        raise OverlayError("an overlay needs a source and at least one receiver")
    if degree < 1 or degree > min(nodes - 1, max_degree):
        raise OverlayError(f"degree {degree} impossible with {nodes} peers (max {max_degree})")
    adj = [set() for _ in range(nodes)]
    order = rng.permutation(nodes).tolist()
    for pos in range(1, nodes):
        v = order[pos]
        earlier = order[:pos]
        open_ = [u for u in earlier if len(adj[u]) < degree] or earlier
        u = open_[int(rng.integers(len(open_)))]
        adj[u].add(v)
        adj[v].add(u)
    for v in order:
        while len(adj[v]) < degree:
            cands = [u for u in range(nodes) if u != v and u not in adj[v] and len(adj[u]) < degree]
            if not cands:
                break
            u = cands[int(rng.integers(len(cands)))]
            adj[u].add(v)
            adj[v].add(u)
    return sorted((u, v) for u in range(nodes) for v in adj[u] if u < v)


def build_overlay(cfg: OverlayConfig, seed: int, total_slots: int) -> Overlay:
    """Deterministic overlay and per-slot capacities for ``seed``."""
    ss = np.random.SeedSequence(seed)
    topo_rng, bw_rng = (np.random.default_rng(s) for s in ss.spawn(2))
    n = cfg.receivers + 1
    edges = build_graph(n, min(cfg.degree, n - 1), topo_rng, cfg.max_degree)
    adj = [[] for _ in range(n)]
    for u, v in edges:
        adj[u].append(v)
        adj[v].append(u)

    R = cfg.receivers
    if cfg.classes:
        counts = class_counts([s for s, _ in cfg.classes], R)
        base = np.concatenate([np.full(c, float(kbps)) for c, (_, kbps) in zip(counts, cfg.classes)])
        base = base[bw_rng.permutation(R)]
    else:
        base = bw_rng.uniform(*cfg.download_range, size=R)
    factor = np.ones((R, total_slots))
    if cfg.change_interval > 0:
        for start in range(cfg.change_interval, total_slots, cfg.change_interval):
            factor[:, start:] = bw_rng.uniform(*cfg.change_range, size=(R, 1))
    down = base[:, None] * factor
    if not cfg.classes:
        down = np.minimum(down, cfg.download_range[1])
    if cfg.trace is not None:
        down = np.tile([cfg.trace.value_at(t) for t in range(total_slots)], (R, 1))
    down = np.rint(down).astype(np.int64)
    up = np.rint(down * cfg.upload_ratio).astype(np.int64)

    peers = [PeerSpec(SOURCE, np.zeros(total_slots, dtype=np.int64),
                      np.full(total_slots, int(round(cfg.source_upload)), dtype=np.int64),
                      tuple(sorted(adj[0])), "source")]
    for r in range(R):
        peers.append(PeerSpec(r + 1, down[r], up[r], tuple(sorted(adj[r + 1]))))
    return Overlay(peers, edges)


@dataclass(frozen=True)
class SimConfig:
    profile: VideoProfile
    overlay: OverlayConfig = field(default_factory=OverlayConfig)
    smoother: str = "hybrid"
    scheduler: str = "gap"
    urgent_len: int = 15
    playing_len: int | None = None
    prefetch_len: int | None = None
    priority: str = "standard"
    estimator: str | None = None
    ewma_factor: float = 0.25
    resume_after: int = 1
    capacity_model: str = "residual"
    reliability_history: int = 10
    duration: int | None = None

    def __post_init__(self):
        if self.smoother not in STRATEGIES:
            raise ValueError(f"unknown smoother {self.smoother!r}")
        if self.scheduler not in SCHEDULERS:
            raise ValueError(f"unknown scheduler {self.scheduler!r}")
        if self.capacity_model not in CAPACITY_MODELS:
            raise ValueError(f"unknown capacity model {self.capacity_model!r}")
        if self.duration is not None and not 1 <= self.duration <= self.profile.total_slots:
            raise ValueError("duration must lie in [1, total_slots]")

    @property
    def playing(self) -> int:
        return 2 * self.urgent_len if self.playing_len is None else self.playing_len

    @property
    def prefetch(self) -> int:
        return 2 * self.urgent_len if self.prefetch_len is None else self.prefetch_len

    @property
    def stream_slots(self) -> int:
        return self.profile.total_slots if self.duration is None else self.duration

    @property
    def lead(self) -> int:
        """Wall slots between joining and stream slot 0 reaching the urgent interval."""
        return self.urgent_len

    @property
    def clock_slots(self) -> int:
        """Wall slots needed to play ``stream_slots`` slots after startup."""
        return self.stream_slots + self.playing + self.lead

    def forecast(self) -> ForecastConfig:
        kind = self.estimator or ("window-mean" if self.smoother in ("raw", "amplitude") else "ewma")
        return ForecastConfig(kind, self.ewma_factor, self.urgent_len)


class Simulation:
    """State of one run; call ``step`` once per wall slot (or ``run_all``)."""

    def __init__(self, cfg: SimConfig, seed: int = 0, overlay: Overlay | None = None):
        self.cfg = cfg
        self.seed = seed
        p = cfg.profile
        self.overlay = overlay or build_overlay(cfg.overlay, seed, cfg.clock_slots)
        n = self.overlay.size
        self.n = n
        S, L = p.total_slots, p.layer_count
        ss = np.random.SeedSequence(seed).spawn(4)
        self.sched_rng = np.random.default_rng(ss[2])
        self.order_rng = np.random.default_rng(ss[3])

        self.held = np.full((n, S, L), NOT_RECEIVED, dtype=np.int32)
        self.held[SOURCE] = 0
        self.advertised = self.held >= 0
        self.in_flight = np.zeros((n, S, L), dtype=bool)
        self.target = np.zeros((n, S), dtype=np.int16)
        self.down = np.stack([peer.download for peer in self.overlay.peers])
        self.up = np.stack([peer.upload for peer in self.overlay.peers])
        if self.down.shape[1] < cfg.clock_slots:
            raise OverlayError("overlay capacities do not cover the run")
        self.neighbors = [np.asarray(peer.neighbors, dtype=np.int64) for peer in self.overlay.peers]
        self.degree = np.asarray([max(len(nb), 1) for nb in self.neighbors], dtype=np.float64)
        self.link_used = np.zeros((n, n), dtype=np.int64)
        self.share_mask = np.zeros((len(self.neighbors), len(self.neighbors)))
        for k, nb in enumerate(self.neighbors):
            self.share_mask[k, nb] = 1.0
        self.receivers = [peer.id for peer in self.overlay.peers if peer.role == "receiver"]

        self.layer_kbits = np.asarray([p.chunk_kbits(l) for l in range(L)], dtype=np.float64)
        self.unit = float(self.layer_kbits.max())
        self.params = PriorityParams.preset(
            cfg.priority, L, horizon=cfg.playing + cfg.urgent_len + cfg.prefetch)
        forecast = cfg.forecast()
        self.smoothers = {}
        self.windows = {}
        for i in self.receivers:
            self.smoothers[i] = Smoother(cfg.smoother, p, cfg.urgent_len, forecast)
            self.windows[i] = SlidingWindow(
                p, cfg.urgent_len, cfg.playing, cfg.prefetch,
                playhead=-(cfg.playing + cfg.lead), received=self.held[i], target=self.target[i], resume_after=cfg.resume_after)
        self.samples = {i: [] for i in self.receivers}
        self.last_sample = {i: 0.0 for i in self.receivers}

        H = cfg.reliability_history
        self.rel_issued = np.zeros((n, H, n), dtype=np.int64)
        self.rel_done = np.zeros((n, H, n), dtype=np.int64)
        self.cur_issued = np.zeros((n, n), dtype=np.int64)
        self.cur_done = np.zeros((n, n), dtype=np.int64)
        self.rel_pos = np.zeros(n, dtype=np.int64)

        self.queues = {k: deque() for k in range(n)}
        self.arrivals: dict = {}
        self.log: list = []
        self.tallies = {i: mx.PeerTally(L) for i in self.receivers}
        self.clock = 0
        self.selected_upto = 0

    # ------------------------------------------------------------ helpers
    def reliability(self, i: int, nb: np.ndarray) -> np.ndarray:
        issued = self.rel_issued[i][:, nb].sum(axis=0)
        done = self.rel_done[i][:, nb].sum(axis=0)
        out = np.ones(len(nb))
        mask = issued > 0
        out[mask] = done[mask] / issued[mask]
        return out

    def _close_period(self, i: int) -> None:
        """Cancel i's outstanding requests and roll its reliability history."""
        for k in self.neighbors[i].tolist():
            q = self.queues[k]
            if q and any(r[0] == i for r in q):
                self.queues[k] = deque(r for r in q if r[0] != i)
        pos = self.rel_pos[i]
        self.rel_issued[i, pos] = self.cur_issued[i]
        self.rel_done[i, pos] = self.cur_done[i]
        self.rel_pos[i] = (pos + 1) % self.cfg.reliability_history
        self.cur_issued[i] = 0
        self.cur_done[i] = 0

    def _measure(self, w, dl_used, up_used):
        """Available bandwidth seen by each receiver in slot w (kbit/s).

        What it received plus its share of the upload its neighbors left
        unused, capped by its own download capacity.
        """
        dur = self.cfg.profile.chunk_duration
        spare = np.maximum(self.up[:, w] * dur - up_used, 0.0) / self.degree
        for i in self.receivers:
            avail = dl_used[i] + spare[self.neighbors[i]].sum()
            self.last_sample[i] = float(min(self.down[i, w], avail / dur))

    # ------------------------------------------------------------ step parts
    def _gossip(self, w):
        if w % self.cfg.overlay.gossip_period == 0:
            np.greater_equal(self.held, 0, out=self.advertised)

    def _capacity_events(self, w):
        for i in self.receivers:
            kbps = int(self.down[i, w])
            if w == 0 or kbps != self.down[i, w - 1]:
                self.log.append((w, i, "capacity", "", "", "", kbps))
            self.tallies[i].capacity += kbps

    def _select(self, w, now):
        cfg = self.cfg
        first = self.selected_upto
        last = min(now + cfg.urgent_len, cfg.profile.total_slots)
        self.selected_upto = max(first, last)
        for i in self.receivers:
            if w > 0:
                self.samples[i].append(self.last_sample[i])
            sm = self.smoothers[i]
            for j in range(first, last):
                level = sm.select(j, self.samples[i], self.held[i])
                self.target[i, j] = max(level, 0)
                self.tallies[i].selected.append(level)
                self.log.append((w, i, "select", j, "", "", level))

    def _missing(self, i, lo, hi, ceiling=None, floor=0):
        if hi <= lo:
            return None, None
        block = (self.held[i, lo:hi] < 0) & ~self.in_flight[i, lo:hi]
        L = block.shape[1]
        if ceiling is None:
            limit = self.target[i, lo:hi].astype(np.int64)[:, None]
        else:
            limit = ceiling
        block &= (np.arange(L)[None, :] <= limit) & (np.arange(L)[None, :] >= floor)
        s, l = np.nonzero(block)
        if s.size == 0:
            return None, None
        return s + lo, l

    def _plan(self, i, w, now, slots, layers, dl_left, ul_left):
        cfg = self.cfg
        nb = self.neighbors[i]
        if nb.size == 0:
            return
        avail = self.advertised[nb][:, slots, layers]
        if cfg.capacity_model == "residual":
            link = np.minimum(dl_left[i], ul_left[nb])
        elif cfg.capacity_model == "share":
            link = np.minimum(dl_left[i], ul_left[nb, i])
        else:
            link = np.minimum(self.down[i, w], self.up[nb, w]) * cfg.overlay.scheduling_period
        caps = np.floor(link * cfg.profile.chunk_duration / self.unit).astype(np.int64)
        if cfg.capacity_model == "link":
            caps -= self.link_used[i, nb]  # earlier passes of this period
        caps = np.maximum(caps, 0)
        budget = int(dl_left[i] * cfg.profile.chunk_duration // self.unit)
        if budget <= 0 or not caps.any():
            return
        rel = self.reliability(i, nb)
        order = np.lexsort((nb, -caps, -rel))
        pr = priorities(layers, now, slots + cfg.playing, self.params)
        matrix = AssignmentMatrix(tuple(nb[order].tolist()), slots, layers, avail[order], pr,
                                  caps[order], rel[order])
        kind = cfg.scheduler
        if kind == "gap":
            sched = gap_schedule(matrix, budget=budget)
        else:
            threshold = None
            if kind == "layerp2p":
                samples = self.samples[i]
                last = samples[-1] if samples else 0.0
                threshold = max_sustainable_quality(last, cfg.profile) - 1
            sched = baseline_schedule(kind, matrix, self.sched_rng, budget=budget,
                                      threshold=threshold)
        rows = sched.assign
        picked = np.flatnonzero(rows >= 0)
        if picked.size == 0:
            return
        senders = np.asarray(matrix.neighbor_ids)[rows[picked]]
        sizes = self.layer_kbits[layers[picked]]
        np.add.at(self.cur_issued[i], senders, 1)
        dl_left[i] -= sizes.sum()
        if cfg.capacity_model == "residual":
            np.subtract.at(ul_left, senders, sizes)
        elif cfg.capacity_model == "share":
            np.subtract.at(ul_left, (senders, i), sizes)
        else:
            np.add.at(self.link_used[i], senders, 1)
        for k, s_, l_, p_ in zip(senders.tolist(), slots[picked].tolist(),
                                 layers[picked].tolist(), pr[picked].tolist()):
            self.queues[k].append((i, s_, l_))
            self.log.append((w, i, "request", s_, l_, k, format(p_, ".6g")))

    def _schedule(self, w, now, dl_left, ul_left):
        cfg = self.cfg
        if w % cfg.overlay.scheduling_period:
            return
        S = cfg.profile.total_slots
        if cfg.capacity_model == "link":
            self.link_used[:] = 0
        order = [self.receivers[x] for x in self.order_rng.permutation(len(self.receivers))]
        # every receiver's urgent base layer goes out first, then the rest of
        # the urgent interval, and only then does anyone prefetch
        lo, hi = max(now, 0), min(now + cfg.urgent_len, S)
        for i in order:
            self._close_period(i)
            slots, layers = self._missing(i, lo, hi, 0)
            if slots is not None:
                self._plan(i, w, now, slots, layers, dl_left, ul_left)
        for i in order:
            slots, layers = self._missing(i, lo, hi, floor=1)
            if slots is not None:
                self._plan(i, w, now, slots, layers, dl_left, ul_left)
        for i in order:
            ceiling = self.smoothers[i].prefetch_ceiling()
            if ceiling >= 0 and dl_left[i] >= self.unit:
                lo, hi = max(now + cfg.urgent_len, 0), min(now + cfg.urgent_len + cfg.prefetch, S)
                slots, layers = self._missing(i, lo, hi, ceiling)
                if slots is not None:
                    self._plan(i, w, now, slots, layers, dl_left, ul_left)

    def _deliver(self, w, i, k, s, l):
        deadline = s + self.cfg.playing
        self.tallies[i].delivered[l] += 1
        if w - self.cfg.lead > deadline:
            self.tallies[i].late += 1
            self.log.append((w, i, "late", s, l, k, deadline))
        else:
            self.held[i, s, l] = w
            self.log.append((w, i, "deliver", s, l, k, deadline))

    def _serve(self, w):
        cfg = self.cfg
        delay = cfg.overlay.delay
        dur = cfg.profile.chunk_duration
        dl_used = np.zeros(self.n)
        up_used = np.zeros(self.n)
        for k in range(self.n):
            q = self.queues[k]
            if not q:
                continue
            budget = self.up[k, w] * dur
            used = 0.0
            keep = deque()
            while q:
                req = q.popleft()
                i, s, l = req
                size = self.layer_kbits[l]
                if s + cfg.playing < w - cfg.lead:
                    continue  # left the window
                if used + size > budget:
                    keep.append(req)
                    keep.extend(q)
                    q.clear()
                    break
                if dl_used[i] + size > self.down[i, w] * dur:
                    keep.append(req)
                    continue
                used += size
                dl_used[i] += size
                self.cur_done[i, k] += 1
                if delay:
                    self.in_flight[i, s, l] = True
                    self.arrivals.setdefault(w + delay, []).append((i, k, s, l))
                else:
                    self._deliver(w, i, k, s, l)
            self.queues[k] = keep
            up_used[k] = used
        self._measure(w, dl_used, up_used)
        for i, k, s, l in self.arrivals.pop(w, []):
            self.in_flight[i, s, l] = False
            self._deliver(w, i, k, s, l)

    def _play(self, w, now):
        j = now - self.cfg.playing
        if not 0 <= j < self.cfg.stream_slots:
            for i in self.receivers:
                self.windows[i].advance(1)
            return
        for i in self.receivers:
            win = self.windows[i]
            prefix = win.decodable_prefix(j)
            held = int((self.held[i, j] >= 0).sum())
            report = win.advance(1)
            t = self.tallies[i]
            t.account_slot(int(self.target[i, j]), prefix, held)
            if report.played:
                q = report.qualities[j]
                t.timeline.append(q)
                self.log.append((w, i, "play", j, "", "", q))
            else:
                t.stalled.append(j)
                self.log.append((w, i, "stall", j, "", "", prefix))

    def step(self, w: int | None = None) -> list:
        w = self.clock if w is None else w
        if w != self.clock:
            raise ValueError(f"expected slot {self.clock}, got {w}")
        start = len(self.log)
        now = w - self.cfg.lead
        self._gossip(w)
        self._capacity_events(w)
        self._select(w, now)
        dl_left = self.down[:, w].astype(np.float64) * self.cfg.profile.chunk_duration
        ul_left = self.up[:, w].astype(np.float64) * self.cfg.profile.chunk_duration
        if self.cfg.capacity_model == "share":
            # each sender's upload split evenly over its links: (sender, receiver)
            ul_left = self.share_mask * (ul_left / np.maximum(self.degree, 1))[:, None]
        self._schedule(w, now, dl_left, ul_left)
        self._serve(w)
        self._play(w, now)
        self.clock += 1
        return self.log[start:]

    def run_all(self) -> "RunResult":
        while self.clock < self.cfg.clock_slots:
            self.step()
        return RunResult(self.cfg, self.seed, self.overlay, self.log, self.tallies,
                         self.metrics(), {i: self.smoothers[i] for i in self.receivers})

    def metrics(self) -> mx.RunMetrics:
        return mx.run_metrics(self.tallies, self.layer_kbits.tolist(), self.cfg.profile.chunk_duration)


@dataclass
class RunResult:
    cfg: SimConfig
    seed: int
    overlay: Overlay
    log: list
    tallies: dict
    metrics: mx.RunMetrics
    smoothers: dict

    def batch_tallies(self) -> dict:
        return mx.tallies_from_log(self.log, self.cfg.profile.layer_count,
                                   list(self.tallies), self.cfg.clock_slots)

    def batch_metrics(self) -> mx.RunMetrics:
        return mx.run_metrics(self.batch_tallies(),
                              [self.cfg.profile.chunk_kbits(l) for l in range(self.cfg.profile.layer_count)],
                              self.cfg.profile.chunk_duration)

    def timeline(self, peer: int) -> list:
        return list(self.tallies[peer].timeline)

    def write_log(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(mx.EVENT_COLUMNS)
            w.writerows(self.log)


def run(cfg: SimConfig, seed: int = 0, smoother: str | None = None, scheduler: str | None = None,
        duration: int | None = None, overlay: Overlay | None = None) -> RunResult:
    """Simulate ``cfg`` (optionally overriding strategy names and duration)."""
    changes = {}
    if smoother is not None:
        changes["smoother"] = smoother
    if scheduler is not None:
        changes["scheduler"] = scheduler
    if duration is not None:
        changes["duration"] = duration
    if changes:
        cfg = replace(cfg, **changes)
    return Simulation(cfg, seed, overlay).run_all()
