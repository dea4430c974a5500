"""Layered stream model: chunks, buffer maps and the receiver sliding window.

Time is counted in slots.  A receiver whose playhead sits on stream slot
``t_c`` is at clock ``now = t_c + playing_len``; stream slot ``j`` is
consumed at ``deadline(j) = j + playing_len``.  The playhead advances one
slot per clock tick whether or not playback stalls (live stream).
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

NOT_RECEIVED = -1


@dataclass(frozen=True)
class VideoProfile:
    layer_rates: tuple[float, ...]
    chunk_duration: float = 1.0
    total_slots: int = 400

    def __post_init__(self):
        rates = tuple(float(r) for r in self.layer_rates)
        object.__setattr__(self, "layer_rates", rates)
        if not rates:
            raise ValueError("a profile needs at least one layer")
        if any(r <= 0 for r in rates):
            raise ValueError("layer rates must be positive")
        if self.chunk_duration <= 0:
            raise ValueError("chunk_duration must be positive")
        if self.total_slots < 1:
            raise ValueError("total_slots must be positive")

    @classmethod
    def uniform(cls, layers: int, rate: float, chunk_duration=1.0, total_slots=400):
        return cls((rate,) * layers, chunk_duration, total_slots)

    @property
    def layer_count(self) -> int:
        return len(self.layer_rates)

    @property
    def stream_rate(self) -> float:
        return sum(self.layer_rates)

    def cumulative_rate(self, q: int) -> float:
        """Rate needed to play layers ``0..q`` (0 for q = -1)."""
        return sum(self.layer_rates[: q + 1])

    def chunk_kbits(self, layer: int) -> float:
        return self.layer_rates[layer] * self.chunk_duration


class ChunkId(NamedTuple):
    slot: int
    layer: int


def max_sustainable_quality(bandwidth: float, profile: VideoProfile) -> int:
    """Largest q whose cumulative rate fits in ``bandwidth``; -1 if the base does not."""
    if bandwidth < 0:
        raise ValueError("bandwidth must be non-negative")
    q = -1
    total = 0.0
    for rate in profile.layer_rates:
        total += rate
        if total > bandwidth:
            break
        q += 1
    return q


# --------------------------------------------------------------------------
# buffer maps

_HEADER = struct.Struct("<IIBH")


@dataclass
class BufferMap:
    """Availability bits of one peer over ``width`` slots starting at ``window_start``.

    ``bits[l, w]`` is True when the owner holds chunk ``(window_start + w, l)``.
    """

    owner: int
    window_start: int
    bits: np.ndarray

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=bool)
        if self.bits.ndim != 2:
            raise ValueError("buffer map bits must be a layers x width matrix")

    @property
    def layers(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    def has(self, chunk: ChunkId) -> bool:
        offset = chunk.slot - self.window_start
        if not 0 <= offset < self.width or not 0 <= chunk.layer < self.layers:
            return False
        return bool(self.bits[chunk.layer, offset])

    def to_bytes(self) -> bytes:
        if not 0 < self.layers < 256 or not 0 < self.width < 65536:
            raise ValueError("buffer map dimensions do not fit the wire header")
        header = _HEADER.pack(self.owner, self.window_start, self.layers, self.width)
        payload = np.packbits(self.bits.ravel(), bitorder="big")
        return header + payload.tobytes()

    def __eq__(self, other):
        if not isinstance(other, BufferMap):
            return NotImplemented
        return (self.owner == other.owner and self.window_start == other.window_start
                and self.bits.shape == other.bits.shape
                and bool(np.array_equal(self.bits, other.bits)))


class MalformedBufferMap(ValueError):
    pass


def decode_buffer_map(data: bytes) -> BufferMap:
    if len(data) < _HEADER.size:
        raise MalformedBufferMap("truncated header")
    owner, start, layers, width = _HEADER.unpack_from(data)
    if layers == 0 or width == 0:
        raise MalformedBufferMap("empty dimensions")
    nbits = layers * width
    payload = data[_HEADER.size:]
    if len(payload) != math.ceil(nbits / 8):
        raise MalformedBufferMap(
            f"payload is {len(payload)} bytes, header declares {layers}x{width} bits")
    flat = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), bitorder="big")
    if flat[nbits:].any():
        raise MalformedBufferMap("non-zero padding bits")
    return BufferMap(owner, start, flat[:nbits].reshape(layers, width).astype(bool))


def encode_buffer_map(window: "SlidingWindow", owner: int = 0,
                      width: int | None = None) -> BufferMap:
    """Advertise the window's holdings from the playhead onwards."""
    width = window.span if width is None else width
    start = max(window.playhead, 0)
    bits = np.zeros((window.profile.layer_count, width), dtype=bool)
    stop = min(start + width, window.profile.total_slots)
    if stop > start:
        bits[:, : stop - start] = (window.received[start:stop] != NOT_RECEIVED).T
    return BufferMap(owner, start, bits)


# --------------------------------------------------------------------------
# sliding window


@dataclass
class PlaybackReport:
    played: list[int] = field(default_factory=list)
    stalled: list[int] = field(default_factory=list)
    qualities: dict[int, int] = field(default_factory=dict)
    undecodable: int = 0


class SlidingWindow:
    """Receiver-side store split into playing, urgent and prefetching intervals.

    ``received`` holds the clock slot at which each (slot, layer) chunk was
    received, or -1.  It may be a view into a larger simulator array.
    ``target`` holds the selected quality per stream slot; playback never
    consumes layers above it.
    """

    def __init__(self, profile: VideoProfile, urgent_len: int,
                 playing_len: int | None = None, prefetch_len: int | None = None,
                 playhead: int | None = None, received: np.ndarray | None = None,
                 target: np.ndarray | None = None, resume_after: int = 1):
        if urgent_len < 1:
            raise ValueError("urgent_len must be >= 1")
        self.profile = profile
        self.urgent_len = urgent_len
        self.playing_len = 2 * urgent_len if playing_len is None else playing_len
        self.prefetch_len = 2 * urgent_len if prefetch_len is None else prefetch_len
        if self.playing_len < 0 or self.prefetch_len < 0:
            raise ValueError("interval lengths must be non-negative")
        # before startup the playhead sits at a negative (virtual) slot
        self.playhead = -self.playing_len if playhead is None else playhead
        shape = (profile.total_slots, profile.layer_count)
        if received is None:
            received = np.full(shape, NOT_RECEIVED, dtype=np.int32)
        if target is None:
            target = np.full(profile.total_slots, profile.layer_count - 1, dtype=np.int16)
        self.received = received
        self.target = target
        self.late: list[tuple[ChunkId, int]] = []
        self.resume_after = resume_after
        self.stalled = False

    # ---- clock and intervals
    @property
    def now(self) -> int:
        return self.playhead + self.playing_len

    @property
    def span(self) -> int:
        return self.playing_len + self.urgent_len + self.prefetch_len

    def deadline(self, slot: int) -> int:
        return slot + self.playing_len

    def _clip(self, lo, hi):
        return max(lo, 0), min(hi, self.profile.total_slots)

    def playing_interval(self) -> range:
        return range(*self._clip(self.playhead, self.playhead + self.playing_len))

    def urgent_interval(self) -> range:
        lo = self.playhead + self.playing_len
        return range(*self._clip(lo, lo + self.urgent_len))

    def prefetch_interval(self) -> range:
        lo = self.playhead + self.playing_len + self.urgent_len
        return range(*self._clip(lo, lo + self.prefetch_len))

    # ---- holdings
    def holds(self, chunk: ChunkId) -> bool:
        return self.received[chunk.slot, chunk.layer] != NOT_RECEIVED

    def receive(self, chunk: ChunkId, at: int | None = None) -> bool:
        """Store a chunk arriving at clock ``at``; returns False if it was late."""
        at = self.now if at is None else at
        if at > self.deadline(chunk.slot):
            self.late.append((chunk, at))
            return False
        if self.received[chunk.slot, chunk.layer] == NOT_RECEIVED:
            self.received[chunk.slot, chunk.layer] = at
        return True

    def decodable_prefix(self, slot: int) -> int:
        """Number of consecutive layers held from the base upwards at ``slot``."""
        row = self.received[slot]
        missing = np.flatnonzero(row == NOT_RECEIVED)
        return int(missing[0]) if missing.size else len(row)

    def missing_chunks(self, target_quality: int) -> list[ChunkId]:
        return missing_chunks(self, target_quality)

    def advance(self, slots: int = 1) -> PlaybackReport:
        return advance_playhead(self, slots)


def missing_chunks(window: SlidingWindow, target_quality: int) -> list[ChunkId]:
    """Urgent-interval chunks with layer <= q that are neither held nor past deadline."""
    if target_quality < 0:
        return []
    q = min(target_quality, window.profile.layer_count - 1)
    span = window.urgent_interval()
    if not len(span):
        return []
    block = window.received[span.start:span.stop, : q + 1]
    slots, layers = np.nonzero(block == NOT_RECEIVED)
    now = window.now
    out = []
    for s, l in zip(slots.tolist(), layers.tolist()):
        slot = span.start + s
        if window.deadline(slot) >= now:
            out.append(ChunkId(slot, l))
    return out


def decodable(window: SlidingWindow, chunk: ChunkId) -> bool:
    """True iff the chunk and every lower layer at its slot arrived before deadline."""
    return window.decodable_prefix(chunk.slot) > chunk.layer


def advance_playhead(window: SlidingWindow, slots: int = 1) -> PlaybackReport:
    """Consume ``slots`` stream slots at the playhead.

    A slot is played at ``min(target, decodable prefix) `` layers.  Playback
    is stalled on a slot without a decodable base chunk; once stalled it
    resumes only when the next ``resume_after`` base chunks are held.
    """
    if slots < 1:
        raise ValueError("slots must be >= 1")
    report = PlaybackReport()
    total = window.profile.total_slots
    for _ in range(slots):
        j = window.playhead
        if 0 <= j < total:
            prefix = window.decodable_prefix(j)
            if window.stalled:
                ahead = window.received[j: j + window.resume_after, 0]
                ok = ahead.size == window.resume_after and bool((ahead != NOT_RECEIVED).all())
            else:
                ok = prefix > 0
            held = int((window.received[j] != NOT_RECEIVED).sum())
            report.undecodable += held - prefix
            if ok:
                window.stalled = False
                q = min(int(window.target[j]), prefix - 1)
                report.played.append(j)
                report.qualities[j] = max(q, 0)
            else:
                window.stalled = True
                report.stalled.append(j)
        window.playhead += 1
    return report


def quality_of(profile: VideoProfile, q: int) -> int:
    """Clamp a quality level into ``[-1, L-1]``."""
    return max(-1, min(int(q), profile.layer_count - 1))


def chunk_order(chunks: Sequence[ChunkId]) -> list[ChunkId]:
    """Deterministic tie order: lower layer first, then earlier slot."""
    return sorted(chunks, key=lambda c: (c.layer, c.slot))
