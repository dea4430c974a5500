"""Acceptance criteria 1-9, one test each.

Every test records a ``criterion N: PASS|FAIL`` line that is printed in the
terminal summary, then asserts.  Criteria 6-8 run the bundled scenarios and
are marked slow (``-m "not slow"`` skips them).
"""
import math
import time
from fractions import Fraction

import numpy as np
import pytest
from conftest import ACCEPTANCE, worked_matrix, random_matrix

from smosched.forecast import synthetic_trace
from smosched.scenario import load_scenario, run_grid
from smosched.scheduler import (BASELINES, aggregate_priority, baseline_schedule, gap_schedule,
                                oracle_schedule, schedule)
from smosched.smoother import Smoother, mean_quality
from smosched.stream import VideoProfile


def record(n, ok, detail):
    ACCEPTANCE[n] = (bool(ok), detail)
    assert ok, f"criterion {n}: {detail}"


def mean(xs):
    return sum(xs) / len(xs)


def test_1_mean_quality():
    t0 = time.perf_counter()
    value = mean_quality([3, 1, 1, 1, 2, 2])
    ms = (time.perf_counter() - t0) * 1e3
    ok = value == Fraction(5, 3) and isinstance(value, Fraction) and ms < 1
    record(1, ok, f"mean_quality = {value} in {ms:.3f} ms")


def test_2_worked_example():
    m = worked_matrix()
    best = math.inf
    for _ in range(5):  # the first pass pays one-off import and allocation costs
        t0 = time.perf_counter()
        gap = gap_schedule(m)
        rr = baseline_schedule("rr", m)
        oracle = oracle_schedule(m)
        best = min(best, time.perf_counter() - t0)
    ms = best * 1e3
    ok = (len(gap) == 5 and len(rr) == 4
          and aggregate_priority(oracle) == aggregate_priority(gap) and ms < 1)
    record(2, ok, f"gap {len(gap)}, rr {len(rr)}, oracle {aggregate_priority(oracle):g} "
                  f"vs gap {aggregate_priority(gap):g} in {ms:.3f} ms")


def test_3_constraint_suite():
    rng = np.random.default_rng(3)
    t0 = time.perf_counter()
    violations = checked = 0
    for _ in range(1000):
        m = random_matrix(rng)
        kinds = ("gap",) + BASELINES
        if m.shape[0] <= 5 and m.shape[1] <= 12:
            kinds += ("oracle",)
        for kind in kinds:
            s = schedule(kind, m, rng=np.random.default_rng(0), threshold=1)
            violations += len(s.violations())
            checked += 1
    secs = time.perf_counter() - t0
    record(3, violations == 0 and secs < 10,
           f"{violations} violations over {checked} schedules in {secs:.2f} s")


def test_4_oracle_proximity():
    rng = np.random.default_rng(4)
    t0 = time.perf_counter()
    ratios = []
    for _ in range(500):
        m = random_matrix(rng, max_rows=5, max_cols=12)
        best = aggregate_priority(oracle_schedule(m))
        got = aggregate_priority(gap_schedule(m))
        ratios.append(1.0 if best == 0 else got / best)
    secs = time.perf_counter() - t0
    share = mean([r >= 0.9 - 1e-12 for r in ratios])
    record(4, share >= 0.95 and secs < 60,
           f"gap >= 0.9 oracle on {share:.1%} (min ratio {min(ratios):.3f}, "
           f"exact on {mean([r >= 1 - 1e-9 for r in ratios]):.1%}) in {secs:.1f} s")


def test_5_smoothing_invariants():
    profile = VideoProfile.uniform(8, 100, total_slots=400)
    t0 = time.perf_counter()
    bad = []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        window = int(rng.integers(3, 20))
        trace = synthetic_trace(seed, 120, low=float(rng.integers(0, 200)), high=float(rng.integers(400, 1000)),
                                sigma=float(rng.uniform(20, 150))).values()
        held = np.full((len(trace), 8), -1, dtype=np.int32)
        held[rng.random(held.shape) < 0.2] = 0
        out = {}
        for strategy in ("amplitude", "frequency", "hybrid"):
            sm = Smoother(strategy, profile, window)
            out[strategy] = ([sm.select(j, trace[:j], held) for j in range(len(trace))], sm)
        levels, _ = out["frequency"]
        for k in range(0, len(levels), window):
            if len(set(levels[k:k + window])) != 1:
                bad.append(f"frequency seed {seed} window {k // window}")
        levels, sm = out["amplitude"]
        for d in sm.decisions[1:]:
            if d.estimate < d.last_sample and d.quality > levels[d.slot - 1]:
                bad.append(f"amplitude seed {seed} slot {d.slot}")
        _, sm = out["hybrid"]
        lv = sm.window_levels
        for k in range(1, len(lv) - 1):
            if abs(lv[k + 1] - lv[k]) > max(abs(lv[k] - lv[k - 1]), 1):
                bad.append(f"hybrid seed {seed} window {k + 1}")
    secs = time.perf_counter() - t0
    record(5, not bad and secs < 30, f"{len(bad)} violations over 100 traces in {secs:.1f} s"
           + (f" (first: {bad[0]})" if bad else ""))


@pytest.mark.slow
def test_6_scenario2_smoothing(tmp_path):
    sc = load_scenario("scenario2-smoothing")
    t0 = time.perf_counter()
    res = run_grid(sc, tmp_path)
    secs = time.perf_counter() - t0
    assert not res.failures
    limit = math.ceil(400 / 15) - 1
    label = {s: f"{s}+gap" for s in ("raw", "amplitude", "frequency", "hybrid")}

    def get(strategy, seed, attr):
        return getattr(res.runs[None, None, label[strategy], seed], attr)

    good = 0
    for seed in sc.seeds:
        raw = get("raw", seed, "selected_changes")
        good += (get("amplitude", seed, "selected_changes") < raw
                 and get("frequency", seed, "selected_changes") <= limit
                 and get("hybrid", seed, "selected_changes") <= raw / 2)
    sel = {s: mean([get(s, x, "selected_changes") for x in sc.seeds]) for s in label}
    played = {s: mean([get(s, x, "layer_changes") for x in sc.seeds]) for s in label}
    detail = (f"{good}/5 seeds; selected changes "
              + ", ".join(f"{s} {v:.1f}" for s, v in sel.items())
              + "; played changes " + ", ".join(f"{s} {v:.1f}" for s, v in played.items())
              + f"; frequency limit {limit}; {secs:.1f} s")
    record(6, good >= 4 and secs < 60, detail)


@pytest.mark.slow
def test_7_scenario1(tmp_path):
    sc = load_scenario("scenario1")
    t0 = time.perf_counter()
    res = run_grid(sc, tmp_path)
    secs = time.perf_counter() - t0
    assert not res.failures
    key = "overlay.change_interval"
    rows, ok = [], True
    for interval in sc.sweeps[key]:
        got = {}
        for lab in ("hybrid+gap", "raw+layerp2p"):
            ms = [res.runs[key, interval, lab, s] for s in sc.seeds]
            got[lab] = (mean([m.layer_changes for m in ms]), mean([m.stall_events for m in ms]))
        (gc, gs), (lc, ls) = got["hybrid+gap"], got["raw+layerp2p"]
        ok &= gc < lc and gs < ls
        rows.append(f"{interval}: changes {gc:.1f}/{lc:.1f} stalls {gs:.2f}/{ls:.2f}")
    record(7, ok and secs < 600, "smosched/layerp2p " + "; ".join(rows) + f"; {secs:.0f} s")


SCHEDULERS = ("gap", "lrf", "rr", "random")


@pytest.mark.slow
def test_8_scenario2_scheduling(tmp_path):
    sc = load_scenario("scenario2-scheduling")
    t0 = time.perf_counter()
    res = run_grid(sc, tmp_path)
    secs = time.perf_counter() - t0
    assert not res.failures

    def avg(key, value, sched, attr):
        return mean([getattr(res.runs[key, value, f"hybrid+{sched}", s], attr) for s in sc.seeds])

    degrees = sc.sweeps["overlay.degree"]
    rates = sc.sweeps["video.layer_rate"]
    util = {d: {x: avg("overlay.degree", d, x, "bandwidth_utilization") for x in SCHEDULERS} for d in degrees}
    a = all(u["gap"] > u["lrf"] >= u["rr"] > u["random"] for u in util.values())

    b_fail = []
    for x in SCHEDULERS:
        us = [avg("video.layer_rate", r, x, "bandwidth_utilization") for r in rates]
        ws = [avg("video.layer_rate", r, x, "useless_chunk_ratio") for r in rates]
        if any(q > p for p, q in zip(us, us[1:])) or any(q < p for p, q in zip(ws, ws[1:])):
            b_fail.append(x)
    b = not b_fail

    noise = 0.01
    c_fail = []
    for x in SCHEDULERS:
        ws = [avg("overlay.degree", d, x, "useless_chunk_ratio") for d in degrees]
        rising = [q > p + 1e-12 for d, p, q in zip(degrees[1:], ws, ws[1:]) if d <= 15]
        flat = [abs(q - p) <= noise for d, p, q in zip(degrees[1:], ws, ws[1:]) if d > 15]
        if any(rising) or not all(flat):
            c_fail.append(x)
    c = not c_fail

    def delivery(key, value, sched):
        vecs = [res.runs[key, value, f"hybrid+{sched}", s].delivery_ratio_per_layer for s in sc.seeds]
        return [mean([v[l] for v in vecs if not math.isnan(v[l])] or [math.nan]) for l in range(len(vecs[0]))]

    gap12 = delivery(None, None, "gap")
    wins = {x: sum(1 for g, o in zip(gap12, delivery(None, None, x))
                   if math.isnan(o) or (not math.isnan(g) and g >= o)) for x in ("lrf", "rr", "random")}
    six = delivery("video.layers", 6, "gap")
    d6 = all(s >= t for s, t in zip(six, gap12[:6]) if not math.isnan(s) and not math.isnan(t))
    d = all(v >= 10 for v in wins.values()) and d6

    detail = (f"(a) {'ok' if a else 'no'}: util by degree "
              + "; ".join(f"{dg}: " + " ".join(f"{x} {u[x]:.3f}" for x in SCHEDULERS) for dg, u in util.items())
              + f" | (b) {'ok' if b else 'no ' + ','.join(b_fail)}"
              + f" | (c) {'ok' if c else 'no ' + ','.join(c_fail)}"
              + f" | (d) {'ok' if d else 'no'}: gap wins layers {wins}, 6-layer >= 12-layer {d6}"
              + f" | {secs:.0f} s")
    record(8, a and b and c and d and secs < 900, detail)


@pytest.mark.slow
def test_9_determinism(tmp_path):
    sc = load_scenario("scenario2-smoothing").with_overrides(
        ["output.logs=true", "output.overlay=true", "run.strategies=hybrid+gap, raw+layerp2p",
         "sweep.smoothing.window=10, 15"])
    outs = []
    for n in range(2):
        run_grid(sc, tmp_path / str(n), seeds=[7])
        outs.append({p.relative_to(tmp_path / str(n)): p.read_bytes()
                     for p in sorted((tmp_path / str(n)).rglob("*")) if p.is_file()})
    same = outs[0] == outs[1]
    logs = sum(1 for p in outs[0] if p.parts[0] == "logs")
    record(9, same and logs > 0, f"{len(outs[0])} files ({logs} event logs) byte-identical: {same}")
