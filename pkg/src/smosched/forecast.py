"""Bandwidth estimates from the samples of the last smoothing window."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

ESTIMATORS = ("window-mean", "ewma")


class ColdStartError(RuntimeError):
    """No bandwidth sample precedes the requested slot."""


class TraceError(ValueError):
    pass


@dataclass(frozen=True)
class BandwidthTrace:
    samples: tuple[tuple[int, float], ...]
    source: str = "measured"

    def __post_init__(self):
        samples = tuple((int(s), float(v)) for s, v in self.samples)
        object.__setattr__(self, "samples", samples)
        for (a, _), (b, _) in zip(samples, samples[1:]):
            if b <= a:
                raise TraceError(f"slots must be strictly increasing ({a} then {b})")
        for slot, value in samples:
            if value < 0:
                raise TraceError(f"negative bandwidth at slot {slot}")

    @classmethod
    def from_values(cls, values: Sequence[float], start: int = 0, source="measured"):
        return cls(tuple((start + i, v) for i, v in enumerate(values)), source)

    def values(self) -> list[float]:
        return [v for _, v in self.samples]

    def value_at(self, slot: int) -> float:
        """Sample in force at ``slot`` (step interpolation, first sample before the start)."""
        best = self.samples[0][1]
        for s, v in self.samples:
            if s > slot:
                break
            best = v
        return best

    def __len__(self):
        return len(self.samples)


@dataclass(frozen=True)
class ForecastConfig:
    estimator: str = "window-mean"
    ewma_factor: float = 0.25
    window: int = 15

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if not 0 < self.ewma_factor <= 1:
            raise ValueError("ewma_factor must lie in (0, 1]")
        if self.window < 1:
            raise ValueError("window must be >= 1")


def estimate(values: Sequence[float], cfg: ForecastConfig) -> float:
    """Estimate over a window of samples in slot order (all of them are used)."""
    if len(values) == 0:
        raise ColdStartError("cold start: no bandwidth samples")
    if cfg.estimator == "window-mean":
        return float(sum(values)) / len(values)
    lam = cfg.ewma_factor
    acc = float(values[0])
    for v in values[1:]:
        acc = lam * v + (1.0 - lam) * acc
    return acc


def estimate_next(trace: BandwidthTrace, cfg: ForecastConfig, now: int) -> float:
    """Forecast for slot ``now`` from the samples in ``[now - window, now)``."""
    if not any(s < now for s, _ in trace.samples):
        raise ColdStartError(f"cold start: no sample before slot {now}")
    window = [v for s, v in trace.samples if now - cfg.window <= s < now]
    if not window:
        # samples exist but are older than the window: fall back to the latest one
        window = [v for s, v in trace.samples if s < now][-1:]
    return estimate(window, cfg)


def synthetic_trace(seed: int, slots: int, low: float = 100.0, high: float = 900.0,
                    phi: float = 0.95, sigma: float = 60.0) -> BandwidthTrace:
    """Mean-reverting random walk clipped to [low, high], one integer sample per slot.

    Models an aggregated download rate that wanders around the middle of
    its range with second-scale jitter.
    """
    if not low < high:
        raise TraceError("need low < high")
    rng = np.random.default_rng(seed)
    mu = (low + high) / 2.0
    x = mu
    values = []
    for _ in range(slots):
        x = min(high, max(low, mu + phi * (x - mu) + rng.normal(0.0, sigma)))
        values.append(float(round(x)))
    return BandwidthTrace.from_values(values, source="synthetic")


def load_trace(path) -> BandwidthTrace:
    """Parse a ``slot,kbps`` CSV; a non-numeric first row is taken as a header."""
    samples = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
                continue
            if len(row) != 2:
                raise TraceError(f"line {lineno}: expected 'slot,kbps', got {row!r}")
            try:
                slot = int(row[0])
                value = float(row[1])
            except ValueError:
                if lineno == 1 and not samples:
                    continue
                raise TraceError(f"line {lineno}: malformed row {row!r}") from None
            if value < 0:
                raise TraceError(f"line {lineno}: negative bandwidth {value}")
            if samples and slot <= samples[-1][0]:
                raise TraceError(f"line {lineno}: slot {slot} is not after {samples[-1][0]}")
            samples.append((slot, value))
    return BandwidthTrace(tuple(samples), source="file")


def save_trace(trace: BandwidthTrace, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["slot", "kbps"])
        for slot, value in trace.samples:
            writer.writerow([slot, f"{value:g}"])
