"""Kernel selection: the compiled extension when it imports, else pure Python.

Set ``SMOSCHED_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _pykernels

BACKEND = "python"

if os.environ.get("SMOSCHED_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels
else:
    _impl = _pykernels

knapsack_select = _impl.knapsack_select
gap_rows = _impl.gap_rows
oracle_assign = _impl.oracle_assign

__all__ = ["BACKEND", "knapsack_select", "gap_rows", "oracle_assign"]
