"""Command line entry point: ``smosched run`` and ``smosched compare``."""
from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from pathlib import Path

from .scenario import ScenarioError, bundled_scenarios, load_scenario, run_grid, schema_text

log = logging.getLogger("smosched")

RELATIONS = {
    "lt": lambda a, b: a < b,
    "le": lambda a, b: a <= b,
    "eq": lambda a, b: a == b,
    "ge": lambda a, b: a >= b,
    "gt": lambda a, b: a > b,
}


class SchemaError(ValueError):
    pass


def _read(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError(f"{path}: empty table")
    return rows[0], rows[1:]


def _number(text):
    if text == "":
        return math.nan
    try:
        return float(text)
    except ValueError:
        return None


def default_keys(columns) -> list:
    """Row-identity columns: peer, config, layer and swept scenario keys."""
    return [c for c in columns if c in ("peer", "config", "layer") or "." in c]


def _select(cols, rows, filters, label):
    for item in filters or ():
        col, eq, want = item.partition("=")
        if not eq or col not in cols:
            raise SchemaError(f"bad filter for table {label}: {item!r}")
        i = cols.index(col)
        rows = [r for r in rows if r[i] == want]
    return rows


def compare_tables(path_a, path_b, metric: str, relation: str, keys=None,
                   filter_a=(), filter_b=()):
    """Check ``a.metric <relation> b.metric`` on rows matched by key columns.

    The strategy column is not a key, so tables from two strategies can be
    compared directly; ``filter_a``/``filter_b`` (``col=value`` strings) pick
    rows out of a table that holds several.  Returns the violations as
    (key, a, b) tuples.
    """
    if relation not in RELATIONS:
        raise ValueError(f"unknown relation {relation!r}")
    cols_a, rows_a = _read(path_a)
    cols_b, rows_b = _read(path_b)
    if cols_a != cols_b:
        only_a = [c for c in cols_a if c not in cols_b]
        only_b = [c for c in cols_b if c not in cols_a]
        raise SchemaError(f"column mismatch: only in A {only_a}, only in B {only_b}")
    if metric not in cols_a:
        raise SchemaError(f"no column {metric!r}")
    m = cols_a.index(metric)
    rows_a = _select(cols_a, rows_a, filter_a, "A")
    rows_b = _select(cols_b, rows_b, filter_b, "B")
    keys = default_keys(cols_a) if keys is None else list(keys)
    missing = [k for k in keys if k not in cols_a]
    if missing:
        raise SchemaError(f"no key column(s) {missing}")
    idx = [cols_a.index(k) for k in keys]

    def key(row):
        return tuple(row[i] for i in idx)

    index_b = {key(r): r for r in rows_b}
    if len(index_b) != len(rows_b):
        raise SchemaError("key columns do not identify rows uniquely")
    index_a = {key(r): r for r in rows_a}
    if set(index_a) != set(index_b):
        raise SchemaError("tables cover different rows")
    op = RELATIONS[relation]
    bad = []
    for k, ra in index_a.items():
        a, b = _number(ra[m]), _number(index_b[k][m])
        if a is None or b is None:
            raise SchemaError(f"{metric} is not numeric in row {k}")
        if math.isnan(a) and math.isnan(b):
            continue
        if not op(a, b):
            bad.append((k, a, b))
    return bad


def cmd_run(args) -> int:
    try:
        sc = load_scenario(args.scenario).with_overrides(args.set or [])
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out)
    seeds = None if args.seed is None else [args.seed]
    progress = (lambda msg: log.info("running %s", msg))
    try:
        res = run_grid(sc, out, seeds=seeds, progress=progress)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for f in res.files:
        log.debug("wrote %s", f)
    print(f"{sc.name}: {len(res.runs)} runs, {len(res.files)} files in {out}")
    for msg in res.failures:
        print(f"failed: {msg}", file=sys.stderr)
    return 1 if res.failures else 0


def cmd_compare(args) -> int:
    try:
        keys = None if args.key is None else [k for k in args.key.split(",") if k]
        bad = compare_tables(args.table_a, args.table_b, args.metric, args.relation, keys,
                             args.filter_a, args.filter_b)
    except (SchemaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if not bad:
        print(f"pass: {args.metric} {args.relation} holds on every row")
        return 0
    print(f"fail: {len(bad)} row(s) violate {args.metric} {args.relation}")
    for k, a, b in bad:
        print(f"  {'/'.join(k) or '-'}: {a!r} vs {b!r}")
    return 1


def cmd_scenarios(args) -> int:
    if args.schema:
        print(schema_text())
    else:
        print("\n".join(bundled_scenarios()))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="smosched", description="Layered P2P streaming experiments.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario grid and write CSV tables")
    r.add_argument("scenario", help="scenario file, or the name of a bundled one")
    r.add_argument("--seed", type=int, help="run only this seed")
    r.add_argument("--out", default="out", help="output directory (default: out)")
    r.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a scenario key (repeatable)")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="check a relation between two tables")
    c.add_argument("table_a")
    c.add_argument("table_b")
    c.add_argument("--metric", required=True)
    c.add_argument("--relation", required=True, choices=sorted(RELATIONS))
    c.add_argument("--key", help="comma-separated row key columns (default: peer/config/layer/sweep)")
    c.add_argument("--filter-a", action="append", metavar="COL=VALUE", help="keep matching rows of A")
    c.add_argument("--filter-b", action="append", metavar="COL=VALUE", help="keep matching rows of B")
    c.set_defaults(func=cmd_compare)

    s = sub.add_parser("scenarios", help="list bundled scenarios")
    s.add_argument("--schema", action="store_true", help="print every scenario key with its default")
    s.set_defaults(func=cmd_scenarios)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
