"""Playout smoothing: amplitude, frequency and hybrid quality selection.

Quality levels are integers in ``[-1, L-1]``; level q means layers 0..q are
played and -1 means not even the base layer fits.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple, Sequence

import numpy as np

from .forecast import ColdStartError, ForecastConfig, estimate
from .stream import NOT_RECEIVED, VideoProfile, max_sustainable_quality, quality_of

STRATEGIES = ("raw", "amplitude", "frequency", "hybrid")


def mean_quality(history: Sequence[int]) -> Fraction:
    """Exact mean of the levels achieved over the last smoothing window."""
    if len(history) == 0:
        raise ValueError("mean quality of an empty history")
    return Fraction(sum(int(q) for q in history), len(history))


def mean_deviation(prev_level: int, mean: Fraction) -> Fraction:
    return abs(Fraction(prev_level) - Fraction(mean))


def amplitude_step(prev_level: int, alpha, estimate: float, last_sample: float,
                   sustainable: int, prefetched: int, layer_count: int) -> int:
    """One step of the smooth-layered-stream procedure.

    On a non-decreasing forecast the level may rise by at most ``alpha``
    (floored); on a forecast drop it never rises and prefetched layers
    cushion the fall.  ``prefetched`` below 0 gives no cushion.
    """
    if estimate >= last_sample:
        level = min(sustainable, math.floor(prev_level + alpha))
    else:
        level = min(sustainable + max(prefetched, 0), prev_level)
    return max(-1, min(level, layer_count - 1))


@dataclass
class PrefetchView:
    """Held chunks (slots x layers) for the slots about to be decided."""

    held: np.ndarray
    profile: VideoProfile

    @classmethod
    def from_received(cls, received: np.ndarray, lo: int, hi: int, profile: VideoProfile):
        hi = min(hi, received.shape[0])
        return cls(received[lo:hi] != NOT_RECEIVED, profile)

    @property
    def slots(self) -> int:
        return self.held.shape[0]

    def complete_quality(self) -> int:
        """Highest q such that every layer <= q is held for every slot."""
        if self.slots == 0:
            return -1
        full = self.held.all(axis=0)
        missing = np.flatnonzero(~full)
        return (int(missing[0]) if missing.size else self.profile.layer_count) - 1

    def partial_quality(self) -> int:
        """Highest layer of which at least one chunk is held."""
        any_held = np.flatnonzero(self.held.any(axis=0))
        return int(any_held[-1]) if any_held.size else -1

    def missing_kbits(self, q: int) -> float:
        if q < 0:
            return 0.0
        gaps = (~self.held[:, : q + 1]).sum(axis=0)
        rates = np.asarray(self.profile.layer_rates[: q + 1])
        return float((gaps * rates).sum() * self.profile.chunk_duration)


def frequency_step(window_index: int, prefetch: PrefetchView, estimate: float,
                   current: int) -> int:
    """Quality for smoothing window ``window_index`` (constant over the window).

    The first window plays the base layer.  Later windows may go one level
    above the current one (or up to the highest prefetched layer) but only
    to a level whose still-missing chunks fit in the forecast budget.
    """
    if window_index <= 0:
        return 0
    profile = prefetch.profile
    budget = estimate * prefetch.slots * profile.chunk_duration
    cap = min(max(prefetch.partial_quality(), current + 1), profile.layer_count - 1)
    for q in range(cap, -1, -1):
        if prefetch.missing_kbits(q) <= budget:
            return q
    return -1


def hybrid_clamp(candidate: int, current: int, previous: int, ceiling: int,
                 layer_count: int) -> int:
    """Limit the move away from ``current`` to max(|current - previous|, 1) levels."""
    bound = max(abs(current - previous), 1)
    level = min(candidate, current + bound, ceiling)
    level = max(level, current - bound)
    return max(-1, min(level, layer_count - 1))


def hybrid_step(window_index: int, prefetch: PrefetchView, estimate: float,
                current: int, previous: int) -> int:
    """Frequency decision with the window-to-window jump bounded."""
    candidate = frequency_step(window_index, prefetch, estimate, current)
    ready = prefetch.complete_quality()
    candidate = max(candidate, ready)
    ceiling = max(max_sustainable_quality(estimate, prefetch.profile), ready)
    return hybrid_clamp(candidate, current, previous, ceiling, prefetch.profile.layer_count)


class Decision(NamedTuple):
    slot: int
    quality: int
    estimate: float
    last_sample: float
    sustainable: int
    prefetched: int
    alpha: float
    window: int


@dataclass
class Smoother:
    """Per-receiver quality selection, one call per stream slot in slot order.

    ``select`` sees the bandwidth samples measured so far and the receiver's
    holdings.  Frequency and hybrid decide once per smoothing window, when
    the window's first slot is selected.
    """

    strategy: str
    profile: VideoProfile
    window: int
    forecast: ForecastConfig | None = None
    startup_quality: int = 0
    selected: dict = field(default_factory=dict)
    window_levels: list = field(default_factory=list)
    decisions: list = field(default_factory=list)

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown smoothing strategy {self.strategy!r}")
        if self.window < 1:
            raise ValueError("smoothing window must be >= 1 slot")
        if self.forecast is None:
            kind = "window-mean" if self.strategy in ("raw", "amplitude") else "ewma"
            self.forecast = ForecastConfig(kind, window=self.window)

    def current(self) -> int:
        if not self.selected:
            return self.startup_quality
        return self.selected[max(self.selected)]

    def prefetch_ceiling(self) -> int:
        """Highest layer worth prefetching; raw selection does not prefetch."""
        if self.strategy == "raw":
            return -1
        return min(max(self.current(), 0) + 1, self.profile.layer_count - 1)

    def select(self, slot: int, samples: Sequence[float], received: np.ndarray) -> int:
        if self.strategy in ("frequency", "hybrid"):
            level = self._select_window(slot, samples, received)
        elif self.strategy == "amplitude":
            level = self._select_amplitude(slot, samples, received)
        else:
            level = self._select_raw(slot, samples)
        self.selected[slot] = level
        return level

    # ---- per-strategy rules
    def _estimate(self, samples):
        try:
            return estimate(samples[-self.forecast.window:], self.forecast)
        except ColdStartError:
            return None

    def _select_raw(self, slot, samples):
        if len(samples) == 0:
            level = self.startup_quality
            self.decisions.append(Decision(slot, level, math.nan, math.nan, level, -1, 0.0, -1))
            return level
        last = float(samples[-1])
        level = max_sustainable_quality(last, self.profile)
        self.decisions.append(Decision(slot, level, last, last, level, -1, 0.0, -1))
        return level

    def _select_amplitude(self, slot, samples, received):
        est = self._estimate(samples)
        prev = self.selected.get(slot - 1, self.current())
        if est is None:
            self.decisions.append(
                Decision(slot, self.startup_quality, math.nan, math.nan, -1, -1, 0.0, -1))
            return self.startup_quality
        last = float(samples[-1])
        history = [self.selected[s] for s in range(slot - self.window, slot) if s in self.selected]
        alpha = mean_deviation(prev, mean_quality(history)) if history else Fraction(0)
        sustainable = max_sustainable_quality(est, self.profile)
        ready = PrefetchView.from_received(received, slot, slot + 1, self.profile).complete_quality()
        level = amplitude_step(prev, alpha, est, last, sustainable, ready, self.profile.layer_count)
        # held quality for a whole window: allow a single-level probe upwards
        if (est >= last and alpha == 0 and len(history) == self.window
                and sustainable > prev and level == prev):
            level = prev + 1
        self.decisions.append(Decision(slot, level, est, last, sustainable, ready, float(alpha), -1))
        return level

    def _select_window(self, slot, samples, received):
        k = slot // self.window
        if slot % self.window and len(self.window_levels) > k:
            return self.window_levels[k]
        lo = k * self.window
        view = PrefetchView.from_received(received, lo, lo + self.window, self.profile)
        est = self._estimate(samples)
        while len(self.window_levels) < k:  # windows skipped at startup keep the last level
            self.window_levels.append(self.window_levels[-1] if self.window_levels else 0)
        if k == 0 or est is None:
            level = 0 if k == 0 else self.window_levels[-1]
        elif self.strategy == "frequency" or k == 1:
            level = frequency_step(k, view, est, self.window_levels[k - 1])
        else:
            level = hybrid_step(k, view, est, self.window_levels[k - 1], self.window_levels[k - 2])
        self.window_levels.append(level)
        est_v = math.nan if est is None else est
        last = float(samples[-1]) if len(samples) else math.nan
        sustainable = max_sustainable_quality(est, self.profile) if est is not None else -1
        self.decisions.append(
            Decision(slot, level, est_v, last, sustainable, view.complete_quality(), 0.0, k))
        return level
