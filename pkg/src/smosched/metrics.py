"""Evaluation metrics for a simulated run.

Every metric is derived from integer per-peer tallies.  The simulator fills
one set of tallies while it runs; ``tallies_from_log`` rebuilds another from
the event log alone, and both must agree exactly.

Metrics CSV columns (one row per receiver, then an ``all`` row):

``peer``                 receiver id or ``all``
``played`` / ``stalled`` slots consumed and slots stalled
``layer_changes``        quality changes between consecutive played slots
                         (aggregate row: mean over peers; ``layer_changes_max`` the max)
``selected_changes``     changes between consecutive selected (target) levels
``stall_events``         maximal runs of stalled slots (aggregate: mean)
``stall_mean`` / ``stall_max``  stall durations in slots
``mean_quality``         mean played quality level
``utilization``          delivered kbit / download capacity kbit (aggregate pooled)
``useless_ratio``        (late + undecodable on-time chunks) / received chunks
``late_ratio``           late chunks / received chunks
``relative_received``    fully delivered requested layers / requested layers
``useless_layer_ratio``  1 - relative_received
``delivery_l<k>``        properly received layer-k chunks / demanded layer-k chunks,
                         averaged over peers that demanded layer k (blank if none)
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

EVENT_COLUMNS = ("slot", "peer", "event", "chunk_slot", "layer", "neighbor", "detail")
EVENT_KINDS = ("capacity", "select", "request", "deliver", "late", "play", "stall")


def layer_changes(timeline: Sequence[int]) -> int:
    """Number of t > 0 with L^t != L^(t-1)."""
    return sum(1 for a, b in zip(timeline, timeline[1:]) if a != b)


def stall_stats(stalled: Iterable[int]) -> tuple[int, list[int]]:
    """Group stalled slots into maximal consecutive runs; returns (count, durations)."""
    slots = sorted(set(stalled.stalled if hasattr(stalled, "stalled") else stalled))
    durations: list[int] = []
    prev = None
    for s in slots:
        if prev is not None and s == prev + 1:
            durations[-1] += 1
        else:
            durations.append(1)
        prev = s
    return len(durations), durations


def bandwidth_utilization(delivered_kbits: float, capacity_kbits: float) -> float:
    return 0.0 if capacity_kbits <= 0 else delivered_kbits / capacity_kbits


@dataclass
class PeerTally:
    """Integer counters for one receiver; ``capacity`` is in kbps-slots."""

    layers: int
    timeline: list = field(default_factory=list)
    selected: list = field(default_factory=list)  # selector output per stream slot
    stalled: list = field(default_factory=list)
    delivered: list = field(default_factory=list)  # per layer, on time or late
    received: int = 0
    late: int = 0
    undecodable: int = 0
    capacity: int = 0
    demanded: list = field(default_factory=list)
    proper: list = field(default_factory=list)
    requested_layers: int = 0
    full_layers: int = 0

    def __post_init__(self):
        for name in ("delivered", "demanded", "proper"):
            if not getattr(self, name):
                setattr(self, name, [0] * self.layers)

    def account_slot(self, target: int, prefix: int, held: int) -> None:
        """Book a consumed (or stalled) stream slot."""
        self.received += held
        self.undecodable += held - prefix
        want = max(target, 0) + 1
        self.requested_layers += want
        self.full_layers += min(prefix, want)
        for l in range(want):
            self.demanded[l] += 1
            if l < prefix:
                self.proper[l] += 1


@dataclass
class PeerMetrics:
    peer: int
    played: int
    stalled: int
    layer_changes: int
    selected_changes: int
    stall_events: int
    stall_durations: list
    mean_quality: float
    utilization: float
    useless_ratio: float
    late_ratio: float
    relative_received: float
    delivery: list

    @property
    def useless_layer_ratio(self) -> float:
        return 1.0 - self.relative_received


@dataclass
class RunMetrics:
    peers: list
    layer_changes: float
    layer_changes_max: int
    selected_changes: float
    stall_events: float
    stall_durations: list
    bandwidth_utilization: float
    useless_chunk_ratio: float
    late_arrival_ratio: float
    delivery_ratio_per_layer: list
    relative_received_layer_ratio: float
    mean_quality: float

    @property
    def useless_layer_ratio(self) -> float:
        return 1.0 - self.relative_received_layer_ratio


def _ratio(a, b):
    return a / b if b else 0.0


def peer_metrics(peer: int, t: PeerTally, layer_kbits: Sequence[float],
                 chunk_duration: float) -> PeerMetrics:
    count, durations = stall_stats(t.stalled)
    delivered_kbits = sum(n * k for n, k in zip(t.delivered, layer_kbits))
    return PeerMetrics(
        peer=peer,
        played=len(t.timeline),
        stalled=len(t.stalled),
        layer_changes=layer_changes(t.timeline),
        selected_changes=layer_changes(t.selected),
        stall_events=count,
        stall_durations=durations,
        mean_quality=_ratio(sum(t.timeline), len(t.timeline)),
        utilization=bandwidth_utilization(delivered_kbits, t.capacity * chunk_duration),
        useless_ratio=_ratio(t.late + t.undecodable, t.received + t.late),
        late_ratio=_ratio(t.late, t.received + t.late),
        relative_received=_ratio(t.full_layers, t.requested_layers),
        delivery=[(p / d) if d else math.nan for p, d in zip(t.proper, t.demanded)],
    )


def run_metrics(tallies: dict, layer_kbits: Sequence[float], chunk_duration: float) -> RunMetrics:
    """Aggregate per-peer tallies (keyed by peer id) into run-level metrics."""
    ids = sorted(tallies)
    peers = [peer_metrics(i, tallies[i], layer_kbits, chunk_duration) for i in ids]
    ts = [tallies[i] for i in ids]
    n = max(len(peers), 1)
    delivered = sum(sum(c * k for c, k in zip(t.delivered, layer_kbits)) for t in ts)
    capacity = sum(t.capacity for t in ts) * chunk_duration
    received = sum(t.received + t.late for t in ts)
    layers = len(layer_kbits)
    delivery = []
    for l in range(layers):
        vals = [p.delivery[l] for p in peers if not math.isnan(p.delivery[l])]
        delivery.append(sum(vals) / len(vals) if vals else math.nan)
    played = sum(len(t.timeline) for t in ts)
    return RunMetrics(
        peers=peers,
        layer_changes=sum(p.layer_changes for p in peers) / n,
        layer_changes_max=max((p.layer_changes for p in peers), default=0),
        selected_changes=sum(p.selected_changes for p in peers) / n,
        stall_events=sum(p.stall_events for p in peers) / n,
        stall_durations=[d for p in peers for d in p.stall_durations],
        bandwidth_utilization=bandwidth_utilization(delivered, capacity),
        useless_chunk_ratio=_ratio(sum(t.late + t.undecodable for t in ts), received),
        late_arrival_ratio=_ratio(sum(t.late for t in ts), received),
        delivery_ratio_per_layer=delivery,
        relative_received_layer_ratio=_ratio(sum(t.full_layers for t in ts),
                                             sum(t.requested_layers for t in ts)),
        mean_quality=_ratio(sum(sum(t.timeline) for t in ts), played),
    )


# --------------------------------------------------------------------------
# batch recomputation from the event log


def tallies_from_log(rows: Iterable, layers: int, receivers: Iterable[int],
                     end_slot: int) -> dict:
    """Rebuild per-peer tallies from event-log rows (tuples or CSV string rows).

    ``end_slot`` is the number of simulated clock slots (capacity events hold
    until the next change or the end of the run).
    """
    tallies = {int(i): PeerTally(layers) for i in receivers}
    targets: dict = {}
    on_time: dict = {}
    cap_since: dict = {}
    for row in rows:
        slot, peer, event = int(row[0]), int(row[1]), row[2]
        if peer not in tallies:
            continue
        t = tallies[peer]
        if event == "capacity":
            if peer in cap_since:
                s0, kbps = cap_since[peer]
                t.capacity += kbps * (slot - s0)
            cap_since[peer] = (slot, int(row[6]))
        elif event == "select":
            targets[peer, int(row[3])] = max(int(row[6]), 0)
            t.selected.append(int(row[6]))
        elif event == "deliver":
            layer = int(row[4])
            t.delivered[layer] += 1
            on_time.setdefault((peer, int(row[3])), set()).add(layer)
        elif event == "late":
            t.delivered[int(row[4])] += 1
            t.late += 1
        elif event in ("play", "stall"):
            j = int(row[3])
            held = on_time.pop((peer, j), set())
            prefix = 0
            while prefix in held:
                prefix += 1
            t.account_slot(targets.get((peer, j), 0), prefix, len(held))
            if event == "play":
                t.timeline.append(int(row[6]))
            else:
                t.stalled.append(j)
    for peer, (s0, kbps) in cap_since.items():
        tallies[peer].capacity += kbps * (end_slot - s0)
    return tallies


def read_event_log(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != EVENT_COLUMNS:
            raise ValueError(f"{path}: not an event log (header {header!r})")
        return list(reader)


# --------------------------------------------------------------------------
# CSV output


def metric_columns(layers: int) -> list[str]:
    return (["peer", "played", "stalled", "layer_changes", "layer_changes_max", "selected_changes",
             "stall_events",
             "stall_mean", "stall_max", "mean_quality", "utilization", "useless_ratio",
             "late_ratio", "relative_received", "useless_layer_ratio"]
            + [f"delivery_l{l}" for l in range(layers)])


def _fmt(x) -> str:
    if isinstance(x, float):
        return "" if math.isnan(x) else repr(round(x, 10))
    return str(x)


def metric_rows(m: RunMetrics) -> list[list[str]]:
    rows = []
    for p in m.peers:
        d = p.stall_durations
        rows.append([p.peer, p.played, p.stalled, p.layer_changes, p.layer_changes,
                     p.selected_changes, p.stall_events, _ratio(sum(d), len(d)), max(d, default=0), p.mean_quality,
                     p.utilization, p.useless_ratio, p.late_ratio, p.relative_received,
                     p.useless_layer_ratio] + list(p.delivery))
    d = m.stall_durations
    rows.append(["all", sum(p.played for p in m.peers), sum(p.stalled for p in m.peers),
                 m.layer_changes, m.layer_changes_max, m.selected_changes, m.stall_events, _ratio(sum(d), len(d)),
                 max(d, default=0), m.mean_quality, m.bandwidth_utilization,
                 m.useless_chunk_ratio, m.late_arrival_ratio, m.relative_received_layer_ratio,
                 m.useless_layer_ratio] + list(m.delivery_ratio_per_layer))
    return [[_fmt(v) for v in r] for r in rows]


def write_metrics_csv(m: RunMetrics, path, layers: int) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(metric_columns(layers))
        w.writerows(metric_rows(m))
