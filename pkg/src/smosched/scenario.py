"""Scenario files and the experiment grid behind ``smosched run``.

A scenario is a plain-text file of ``key = value`` lines.  Keys are dotted
(``overlay.degree``), ``#`` starts a comment, blank lines are ignored and a
key may appear only once.  Every key and its default is listed in
``SCHEMA``; nothing outside it influences a run.

``run.strategies`` lists smoother+scheduler pairs, e.g. ``hybrid+gap,
raw+layerp2p``.  A ``sweep.<key> = v1, v2, ...`` line varies one key while
all others keep their base values; each sweep produces its own family table
and runs shared with the base configuration are not repeated.  Sweep points
are comma separated, or semicolon separated when the values are lists.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

from . import metrics as mx
from .forecast import ESTIMATORS, load_trace, synthetic_trace
from .scheduler import SCHEDULERS
from .simnet import CAPACITY_MODELS, OverlayConfig, SimConfig, run
from .smoother import STRATEGIES
from .stream import VideoProfile


class ScenarioError(ValueError):
    """Bad scenario text; the message names the key and, when known, the line."""


def _floats(text):
    return tuple(float(x) for x in text.split(",") if x.strip())


def _ints(text):
    return tuple(int(x) for x in text.split(",") if x.strip())


def _words(text):
    return tuple(x.strip() for x in text.split(",") if x.strip())


def _bool(text):
    low = text.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected true/false, got {text!r}")


def _classes(text):
    out = []
    for part in _words(text):
        share, _, kbps = part.partition(":")
        out.append((float(share), float(kbps)))
    return tuple(out)


def _pairs(text):
    out = []
    for part in _words(text):
        sm, plus, sc = part.partition("+")
        if not plus:
            raise ValueError(f"strategy {part!r} is not smoother+scheduler")
        if sm not in STRATEGIES:
            raise ValueError(f"unknown smoother {sm!r}")
        if sc not in SCHEDULERS:
            raise ValueError(f"unknown scheduler {sc!r}")
        out.append((sm, sc))
    if not out:
        raise ValueError("no strategies given")
    return tuple(out)


def _choice(options):
    def parse(text):
        text = text.strip()
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {text!r}")
        return text
    return parse


def _opt_float(text):
    return None if text.strip() in ("", "auto") else float(text)


# key -> (parser, default text, description)
SCHEMA: dict = {
    "name": (str.strip, "scenario", "label used in output file names"),
    "seeds": (_ints, "0, 1, 2, 3, 4", "run seeds"),
    "run.strategies": (_pairs, "hybrid+gap", "smoother+scheduler pairs to run"),
    "video.layers": (int, "4", "number of layers"),
    "video.layer_rate": (float, "250", "rate of every layer, kbps"),
    "video.chunk_duration": (float, "1", "seconds per slot"),
    "video.duration": (float, "400", "stream length, seconds"),
    "overlay.receivers": (int, "50", "receiving peers (the source is extra)"),
    "overlay.degree": (int, "8", "target mean neighbor count"),
    "overlay.max_degree": (int, "30", "hard neighbor cap"),
    "overlay.download": (_floats, "512, 2000", "uniform download range, kbps"),
    "overlay.classes": (_classes, "", "share:kbps download classes; overrides overlay.download"),
    "overlay.upload_ratio": (float, "0.5", "upload = ratio x download"),
    "overlay.source_upload": (float, "5000", "source upload, kbps"),
    "overlay.change_interval": (int, "0", "slots between bandwidth changes (0: none)"),
    "overlay.change_range": (_floats, "0.2, 1.2", "range of the multiplicative change factor"),
    "overlay.delay": (int, "0", "transfer delay in slots"),
    "overlay.gossip_period": (int, "1", "buffer-map refresh period, slots"),
    "overlay.scheduling_period": (int, "1", "scheduling period, slots"),
    "trace.kind": (_choice(("none", "synthetic", "file")), "none",
                   "download trace applied to every receiver"),
    "trace.path": (str.strip, "", "trace file for trace.kind = file"),
    "trace.low": (float, "100", "synthetic trace floor, kbps"),
    "trace.high": (float, "900", "synthetic trace ceiling, kbps"),
    "trace.phi": (float, "0.95", "synthetic trace persistence"),
    "trace.sigma": (float, "60", "synthetic trace innovation sd, kbps"),
    "smoothing.window": (float, "15", "smoothing window S_W, seconds"),
    "smoothing.playing": (_opt_float, "auto", "playing interval, seconds (auto: 2 S_W)"),
    "smoothing.prefetch": (_opt_float, "auto", "prefetch interval, seconds (auto: 2 S_W)"),
    "smoothing.resume_after": (int, "1", "base chunks needed to leave a stall"),
    "forecast.estimator": (_choice(("auto",) + tuple(ESTIMATORS)), "auto",
                           "auto: window-mean for raw/amplitude, ewma otherwise"),
    "forecast.ewma_factor": (float, "0.25", "EWMA weight of the newest sample"),
    "scheduling.priority": (_choice(("standard", "layer-major", "time-major")), "standard",
                            "priority constants preset"),
    "scheduling.capacity_model": (_choice(CAPACITY_MODELS), "residual", "per-link capacity model"),
    "scheduling.reliability_history": (int, "10", "periods in the reliability estimate"),
    "output.timelines": (_bool, "false", "write quality timelines"),
    "output.timeline_peers": (int, "1", "receivers per timeline file (lowest ids)"),
    "output.logs": (_bool, "false", "write event logs"),
    "output.overlay": (_bool, "false", "write overlay dumps"),
}

# keys that may not be swept
_FIXED = {"name", "seeds", "run.strategies"} | {k for k in SCHEMA if k.startswith("output.")}


def parse_value(key: str, text: str, line: int | None = None):
    where = f"line {line}: " if line is not None else ""
    if key not in SCHEMA:
        raise ScenarioError(f"{where}unknown key {key!r}")
    try:
        return SCHEMA[key][0](text)
    except (ValueError, TypeError) as exc:
        raise ScenarioError(f"{where}{key}: {exc}") from None


@dataclass
class Scenario:
    values: dict
    sweeps: dict  # key -> tuple of parsed values
    source: str = "<string>"

    @property
    def name(self) -> str:
        return self.values["name"]

    @property
    def seeds(self) -> tuple:
        return self.values["seeds"]

    @property
    def strategies(self) -> tuple:
        return self.values["run.strategies"]

    def with_overrides(self, overrides) -> "Scenario":
        vals, sweeps = dict(self.values), dict(self.sweeps)
        for item in overrides:
            key, eq, text = item.partition("=")
            key = key.strip()
            if not eq:
                raise ScenarioError(f"override {item!r}: expected key=value")
            _assign(vals, sweeps, key, text, None)
        return Scenario(vals, sweeps, self.source)

    def variants(self) -> list:
        """(sweep key or None, value, resolved values) for the base and every sweep point."""
        out = [(None, None, dict(self.values))]
        for key, points in self.sweeps.items():
            for p in points:
                vals = dict(self.values)
                vals[key] = p
                out.append((key, p, vals))
        return out


def _assign(vals, sweeps, key, text, line):
    where = f"line {line}: " if line is not None else ""
    if key.startswith("sweep."):
        target = key[len("sweep."):]
        if target not in SCHEMA or target in _FIXED:
            raise ScenarioError(f"{where}cannot sweep {target!r}")
        sep = ";" if ";" in text else ","
        parts = [p for p in text.split(sep) if p.strip()]
        if not parts:
            raise ScenarioError(f"{where}{key}: no sweep values")
        sweeps[target] = tuple(parse_value(target, p, line) for p in parts)
    else:
        vals[key] = parse_value(key, text, line)


def parse_scenario(text: str, source: str = "<string>") -> Scenario:
    vals = {k: parse_value(k, d) for k, (_, d, _) in SCHEMA.items()}
    sweeps: dict = {}
    seen: dict = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        key = key.strip()
        if not eq or not key:
            raise ScenarioError(f"{source} line {n}: expected 'key = value', got {raw.strip()!r}")
        if key in seen:
            raise ScenarioError(f"{source} line {n}: key {key!r} already set on line {seen[key]}")
        seen[key] = n
        try:
            _assign(vals, sweeps, key, value, n)
        except ScenarioError as exc:
            raise ScenarioError(f"{source} {exc}") from None
    return Scenario(vals, sweeps, source)


def load_scenario(path) -> Scenario:
    path = Path(path)
    if not path.exists():
        bundled = Path(__file__).parent / "scenarios" / f"{path.name}.conf"
        if bundled.exists():
            path = bundled
        elif (Path(__file__).parent / "scenarios" / path.name).exists():
            path = Path(__file__).parent / "scenarios" / path.name
        else:
            raise ScenarioError(f"no scenario file {str(path)!r}")
    return parse_scenario(path.read_text(), str(path))


def bundled_scenarios() -> list:
    return sorted(p.stem for p in (Path(__file__).parent / "scenarios").glob("*.conf"))


def schema_text() -> str:
    """The documented key list, one ``key = default  # description`` per line."""
    return "\n".join(f"{k} = {d}  # {doc}" for k, (_, d, doc) in SCHEMA.items())


# --------------------------------------------------------------------------
# building runs


def _slots(seconds: float, chunk: float, key: str) -> int:
    n = seconds / chunk
    if abs(n - round(n)) > 1e-9 or round(n) < 1:
        raise ScenarioError(f"{key}: {seconds} s is not a positive whole number of slots")
    return int(round(n))


def build_config(vals: dict, smoother: str, scheduler: str, seed: int) -> SimConfig:
    chunk = vals["video.chunk_duration"]
    total = _slots(vals["video.duration"], chunk, "video.duration")
    profile = VideoProfile.uniform(vals["video.layers"], vals["video.layer_rate"], chunk, total)
    urgent = _slots(vals["smoothing.window"], chunk, "smoothing.window")
    playing = None if vals["smoothing.playing"] is None else \
        _slots(vals["smoothing.playing"], chunk, "smoothing.playing")
    prefetch = None if vals["smoothing.prefetch"] is None else \
        _slots(vals["smoothing.prefetch"], chunk, "smoothing.prefetch")
    draft = SimConfig(profile, OverlayConfig(), urgent_len=urgent, playing_len=playing,
                      prefetch_len=prefetch)
    trace = None
    kind = vals["trace.kind"]
    if kind == "synthetic":
        trace = synthetic_trace(seed, draft.clock_slots, vals["trace.low"], vals["trace.high"],
                                vals["trace.phi"], vals["trace.sigma"])
    elif kind == "file":
        if not vals["trace.path"]:
            raise ScenarioError("trace.path: required when trace.kind = file")
        trace = load_trace(vals["trace.path"])
    rng = vals["overlay.download"]
    if len(rng) != 2:
        raise ScenarioError("overlay.download: expected two values")
    change = vals["overlay.change_range"]
    if len(change) != 2:
        raise ScenarioError("overlay.change_range: expected two values")
    try:
        overlay = OverlayConfig(
            receivers=vals["overlay.receivers"], degree=vals["overlay.degree"],
            classes=vals["overlay.classes"], download_range=rng,
            upload_ratio=vals["overlay.upload_ratio"], source_upload=vals["overlay.source_upload"],
            change_interval=vals["overlay.change_interval"], change_range=change,
            delay=vals["overlay.delay"], gossip_period=vals["overlay.gossip_period"],
            scheduling_period=vals["overlay.scheduling_period"],
            max_degree=vals["overlay.max_degree"], trace=trace)
        est = vals["forecast.estimator"]
        return replace(draft, overlay=overlay, smoother=smoother, scheduler=scheduler,
                       priority=vals["scheduling.priority"],
                       estimator=None if est == "auto" else est,
                       ewma_factor=vals["forecast.ewma_factor"],
                       resume_after=vals["smoothing.resume_after"],
                       capacity_model=vals["scheduling.capacity_model"],
                       reliability_history=vals["scheduling.reliability_history"])
    except ValueError as exc:
        raise ScenarioError(str(exc)) from None


# --------------------------------------------------------------------------
# the grid


def _fmt_value(v) -> str:
    if isinstance(v, tuple):
        return ";".join(_fmt_value(x) for x in v)
    if isinstance(v, float) and v.is_integer():
        return str(int(v))
    return str(v)


def _tag(key, value) -> str:
    return "" if key is None else f"_{key}={_fmt_value(value)}"


SUMMARY_METRICS = ("layer_changes", "selected_changes", "stall_events", "mean_quality",
                   "utilization", "useless_ratio", "late_ratio", "useless_layer_ratio")


def _metric_dict(m: mx.RunMetrics) -> dict:
    d = {"layer_changes": m.layer_changes, "selected_changes": m.selected_changes,
         "stall_events": m.stall_events, "mean_quality": m.mean_quality,
         "utilization": m.bandwidth_utilization, "useless_ratio": m.useless_chunk_ratio,
         "late_ratio": m.late_arrival_ratio, "useless_layer_ratio": m.useless_layer_ratio}
    for l, v in enumerate(m.delivery_ratio_per_layer):
        d[f"delivery_l{l}"] = v
    return d


def _mean(vals):
    vals = [v for v in vals if not (isinstance(v, float) and math.isnan(v))]
    return sum(vals) / len(vals) if vals else math.nan


@dataclass
class GridResult:
    # (sweep key, value, strategy label, seed) -> RunMetrics
    runs: dict
    files: list
    failures: list


def strategy_label(pair) -> str:
    return f"{pair[0]}+{pair[1]}"


def run_grid(sc: Scenario, out_dir, seeds=None, progress=None) -> GridResult:
    out = Path(out_dir)
    (out / "metrics").mkdir(parents=True, exist_ok=True)
    seeds = tuple(sc.seeds if seeds is None else seeds)
    files, failures = [], []
    cache: dict = {}  # resolved-values key -> {(label, seed): metrics}
    runs: dict = {}
    layers_max = max([sc.values["video.layers"]] + [v for v in sc.sweeps.get("video.layers", ())])
    for key, value, vals in sc.variants():
        ident = tuple(sorted((k, repr(v)) for k, v in vals.items()))
        for pair in sc.strategies:
            label = strategy_label(pair)
            for seed in seeds:
                done = cache.setdefault(ident, {})
                if (label, seed) in done:
                    runs[key, value, label, seed] = done[label, seed]
                    continue
                if progress:
                    progress(f"{sc.name}{_tag(key, value)} {label} seed {seed}")
                try:
                    cfg = build_config(vals, pair[0], pair[1], seed)
                    res = run(cfg, seed)
                except Exception as exc:  # keep going; report at the end
                    failures.append(f"{label} seed {seed}{_tag(key, value)}: {exc}")
                    continue
                done[label, seed] = res.metrics
                runs[key, value, label, seed] = res.metrics
                stem = f"{sc.name}{_tag(key, value)}_{label}_s{seed}"
                path = out / "metrics" / f"{stem}.csv"
                mx.write_metrics_csv(res.metrics, path, cfg.profile.layer_count)
                files.append(path)
                if vals["output.logs"]:
                    (out / "logs").mkdir(exist_ok=True)
                    res.write_log(out / "logs" / f"{stem}.csv")
                    files.append(out / "logs" / f"{stem}.csv")
                if vals["output.overlay"]:
                    (out / "overlays").mkdir(exist_ok=True)
                    res.overlay.dump(out / "overlays" / f"{stem}.csv")
                    files.append(out / "overlays" / f"{stem}.csv")
                if vals["output.timelines"]:
                    (out / "timelines").mkdir(exist_ok=True)
                    path = out / "timelines" / f"{stem}.csv"
                    write_timeline(res, path, vals["output.timeline_peers"])
                    files.append(path)
    files += write_families(sc, runs, seeds, out, layers_max)
    return GridResult(runs, files, failures)


def write_timeline(res, path, peers: int) -> None:
    """Per stream slot: selected level, played level (blank when stalled) and
    the download capacity at the wall slot the stream slot was due."""
    cfg = res.cfg
    ids = sorted(res.tallies)[:max(peers, 0)]
    sel: dict = {}
    played: dict = {}
    for row in res.log:
        if row[1] not in ids:
            continue
        if row[2] == "select":
            sel[row[1], row[3]] = row[6]
        elif row[2] == "play":
            played[row[1], row[3]] = row[6]
    down = res.overlay.peers
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["peer", "slot", "selected", "played", "download_kbps"])
        for i in ids:
            for j in range(cfg.stream_slots):
                wall = j + cfg.playing + cfg.lead
                w.writerow([i, j, sel.get((i, j), ""), played.get((i, j), ""),
                            down[i].download[min(wall, len(down[i].download) - 1)]])


def _family_rows(sc, runs, seeds, key, values, layers_max):
    cols = [key or "config", "strategy", "runs"] + list(SUMMARY_METRICS) + \
        [f"delivery_l{l}" for l in range(layers_max)]
    rows = []
    for value in values:
        for pair in sc.strategies:
            label = strategy_label(pair)
            ms = [runs[key, value, label, s] for s in seeds if (key, value, label, s) in runs]
            if not ms:
                continue
            ds = [_metric_dict(m) for m in ms]
            row = [_fmt_value(value) if key else "base", label, len(ms)]
            row += [_mean([d[c] for d in ds]) for c in cols[3:] if not c.startswith("delivery")]
            row += [_mean([d.get(f"delivery_l{l}", math.nan) for d in ds]) for l in range(layers_max)]
            rows.append(row)
    return cols, [[mx._fmt(v) for v in r] for r in rows]


def write_families(sc, runs, seeds, out: Path, layers_max: int) -> list:
    files = []
    groups = [(None, (None,))] + list(sc.sweeps.items())
    for key, values in groups:
        cols, rows = _family_rows(sc, runs, seeds, key, values, layers_max)
        name = "summary.csv" if key is None else f"family_{key}.csv"
        path = out / f"{sc.name}_{name}"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            w.writerows(rows)
        files.append(path)
    # per-layer delivery of the base configuration, one row per strategy
    path = out / f"{sc.name}_delivery.csv"
    L = sc.values["video.layers"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["strategy", "layer", "delivery_ratio"])
        for pair in sc.strategies:
            label = strategy_label(pair)
            ms = [runs[None, None, label, s] for s in seeds if (None, None, label, s) in runs]
            for l in range(L):
                w.writerow([label, l, mx._fmt(_mean([m.delivery_ratio_per_layer[l] for m in ms]))])
    files.append(path)
    return files


def family_table(path) -> tuple:
    """Read a family/summary CSV into (columns, rows of str)."""
    with open(path, newline="") as fh:
        r = list(csv.reader(fh))
    return r[0], r[1:]
