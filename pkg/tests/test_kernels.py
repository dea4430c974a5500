"""The compiled kernels must agree exactly with the Python reference."""
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smosched import _pykernels, kernels

ck = pytest.importorskip("smosched._ckernels")


@st.composite
def instances(draw):
    n = draw(st.integers(0, 6))
    m = draw(st.integers(0, 14))
    avail = np.array(draw(st.lists(st.booleans(), min_size=n * m, max_size=n * m)), dtype=bool).reshape(n, m)
    # coarse values so exact ties are common
    values = np.array(draw(st.lists(st.integers(1, 4), min_size=m, max_size=m)), dtype=np.float64) / 2
    weights = np.array(draw(st.lists(st.integers(1, 3), min_size=m, max_size=m)), dtype=np.int64)
    caps = np.array(draw(st.lists(st.integers(0, 5), min_size=n, max_size=n)), dtype=np.int64)
    tie = np.array(draw(st.permutations(range(m))), dtype=np.int64)
    return avail, values, weights, tie, caps


@settings(max_examples=300, deadline=None)
@given(instances(), st.integers(-1, 10), st.booleans())
def test_gap_rows(inst, budget, unit):
    avail, values, weights, tie, caps = inst
    if unit:
        weights = np.ones_like(weights)
    a = _pykernels.gap_rows(avail, values, weights, tie, caps, budget)
    b = ck.gap_rows(avail, values, weights, tie, caps, budget)
    assert np.array_equal(np.asarray(a), np.asarray(b))


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(0, 10), max_size=15), st.data())
def test_knapsack(values, data):
    w = data.draw(st.lists(st.integers(1, 4), min_size=len(values), max_size=len(values)))
    cap = data.draw(st.integers(-1, 12))
    a = _pykernels.knapsack_select(np.array(values), np.array(w, dtype=np.int64), cap)
    b = ck.knapsack_select(np.array(values), np.array(w, dtype=np.int64), cap)
    assert list(a) == list(b)


@settings(max_examples=150, deadline=None)
@given(instances())
def test_oracle(inst):
    avail, values, weights, _, caps = inst
    if avail.shape[0] > 5 or avail.shape[1] > 12:
        return
    va, aa = _pykernels.oracle_assign(avail, values, weights, caps)
    vb, ab = ck.oracle_assign(avail, values, weights, caps)
    assert va == pytest.approx(vb)
    assert np.array_equal(np.asarray(aa), np.asarray(ab))


def test_backend_selected():
    assert kernels.BACKEND == "cython"


def test_pure_python_switch():
    env = dict(os.environ, SMOSCHED_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from smosched import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
