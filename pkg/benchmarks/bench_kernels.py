"""Time the compiled kernels against the pure-Python reference.

    python benchmarks/bench_kernels.py [--repeat N]

Each case runs on identical random inputs through both backends and the
results are checked for equality before timing.
"""
import argparse
import timeit

import numpy as np

from smosched import _pykernels

try:
    from smosched import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def gap_case(rng, rows, cols, weighted):
    avail = rng.random((rows, cols)) < 0.6
    values = rng.integers(1, 5, cols) / 4.0
    weights = rng.integers(1, 4, cols) if weighted else np.ones(cols, dtype=np.int64)
    tie = rng.permutation(cols)
    caps = rng.integers(0, 6, rows)
    return lambda k: k.gap_rows(avail, values, weights.astype(np.int64), tie, caps, -1)


def knapsack_case(rng, n, cap):
    values = rng.random(n)
    weights = rng.integers(1, 6, n).astype(np.int64)
    return lambda k: k.knapsack_select(values, weights, cap)


def oracle_case(rng, rows, cols):
    avail = rng.random((rows, cols)) < 0.6
    values = rng.integers(1, 5, cols) / 4.0
    caps = rng.integers(0, 4, rows)
    return lambda k: k.oracle_assign(avail, values, np.ones(cols, dtype=np.int64), caps)


def cases():
    rng = np.random.default_rng(0)
    return [
        ("gap_rows 8x60 unit", gap_case(rng, 8, 60, False)),
        ("gap_rows 20x180 unit", gap_case(rng, 20, 180, False)),
        ("gap_rows 8x60 weighted", gap_case(rng, 8, 60, True)),
        ("knapsack 40 items cap 30", knapsack_case(rng, 40, 30)),
        ("oracle 5x12", oracle_case(rng, 5, 12)),
    ]


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return bool(np.array_equal(np.asarray(a), np.asarray(b)))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled kernels not built; nothing to compare")
        return 1
    print(f"{'case':28s} {'python ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for name, fn in cases():
        if not same(fn(_pykernels), fn(_ckernels)):
            raise SystemExit(f"{name}: backends disagree")
        times = []
        for mod in (_pykernels, _ckernels):
            t = timeit.Timer(lambda: fn(mod))
            n, _ = t.autorange()
            times.append(min(t.repeat(args.repeat, n)) / n * 1e3)
        print(f"{name:28s} {times[0]:10.3f} {times[1]:10.3f} {times[0] / times[1]:7.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
