# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled scheduling kernels; same contracts as ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, isnan, NAN
from libc.stdlib cimport malloc, free, qsort

cnp.import_array()

cdef double TIE_TOL = 1e-12


cdef inline bint _prefer_take(double take, double skip) nogil:
    cdef double scale = fabs(skip)
    if scale < 1.0:
        scale = 1.0
    return take >= skip - TIE_TOL * scale


cdef inline bint _close(double a, double b) nogil:
    cdef double scale = fabs(b)
    if scale < 1.0:
        scale = 1.0
    return fabs(a - b) <= TIE_TOL * scale


cdef void _knapsack(double* values, long* weights, Py_ssize_t n, long cap,
                    double* table, char* chosen) noexcept nogil:
    # table is (n + 1) x (cap + 1), row i = best over items i..n-1
    cdef Py_ssize_t i, c, width = cap + 1
    cdef double take, skip
    cdef long w
    for c in range(width):
        table[n * width + c] = 0.0
    for i in range(n - 1, -1, -1):
        w = weights[i]
        for c in range(width):
            skip = table[(i + 1) * width + c]
            if w <= c:
                take = values[i] + table[(i + 1) * width + c - w]
                table[i * width + c] = take if _prefer_take(take, skip) else skip
            else:
                table[i * width + c] = skip
    c = cap
    for i in range(n):
        chosen[i] = 0
        w = weights[i]
        if w <= c and _prefer_take(values[i] + table[(i + 1) * width + c - w],
                                   table[(i + 1) * width + c]):
            chosen[i] = 1
            c -= w


def knapsack_select(values, weights, long capacity):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] w = np.ascontiguousarray(weights, dtype=np.int64)
    cdef Py_ssize_t n = v.shape[0]
    if n == 0 or capacity <= 0:
        return np.zeros(0, dtype=np.int64)
    cdef double* table = <double*> malloc((n + 1) * (capacity + 1) * sizeof(double))
    cdef char* chosen = <char*> malloc(n)
    try:
        _knapsack(&v[0], <long*> &w[0], n, capacity, table, chosen)
        out = [i for i in range(n) if chosen[i]]
    finally:
        free(table)
        free(chosen)
    return np.asarray(out, dtype=np.int64)


cdef struct Cand:
    double value
    long scarcity
    long rank
    long col


cdef int _cand_cmp(const void* a, const void* b) noexcept nogil:
    cdef const Cand* x = <const Cand*> a
    cdef const Cand* y = <const Cand*> b
    if x.value > y.value:
        return -1
    if x.value < y.value:
        return 1
    if x.scarcity != y.scarcity:
        return -1 if x.scarcity < y.scarcity else 1
    if x.rank != y.rank:
        return -1 if x.rank < y.rank else 1
    return 0


def gap_rows(avail, values, weights, tie_rank, caps, long budget=-1):
    cdef cnp.ndarray[cnp.uint8_t, ndim=2] a = np.ascontiguousarray(avail, dtype=np.uint8)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] w = np.ascontiguousarray(weights, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] tr = np.ascontiguousarray(tie_rank, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] cp = np.ascontiguousarray(caps, dtype=np.int64)
    cdef Py_ssize_t n_rows = a.shape[0], m = a.shape[1]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] assign = np.full(m, -1, dtype=np.int64)
    if m == 0 or n_rows == 0:
        return assign
    cdef cnp.ndarray[cnp.int64_t, ndim=2] later = np.zeros((n_rows + 1, m), dtype=np.int64)
    cdef Py_ssize_t r, j, k, ncand, take
    cdef bint unit = 1
    for j in range(m):
        if w[j] != 1:
            unit = 0
    for r in range(n_rows - 1, -1, -1):
        for j in range(m):
            later[r, j] = later[r + 1, j] + (1 if (a[r, j] and cp[r] > 0) else 0)
    cdef Cand* cands = <Cand*> malloc(m * sizeof(Cand))
    cdef double* kv = <double*> malloc(m * sizeof(double))
    cdef long* kw = <long*> malloc(m * sizeof(long))
    cdef char* chosen = <char*> malloc(m)
    cdef double* table = NULL
    cdef long remaining = budget, room
    try:
        for r in range(n_rows):
            room = cp[r]
            if remaining >= 0 and remaining < room:
                room = remaining
            if room <= 0:
                continue
            ncand = 0
            for j in range(m):
                if a[r, j] and assign[j] < 0:
                    cands[ncand].value = v[j]
                    cands[ncand].scarcity = later[r + 1, j]
                    cands[ncand].rank = tr[j]
                    cands[ncand].col = j
                    ncand += 1
            if ncand == 0:
                continue
            qsort(cands, ncand, sizeof(Cand), _cand_cmp)
            if unit:
                take = ncand if ncand < room else room
                for k in range(take):
                    assign[cands[k].col] = r
                    if remaining >= 0:
                        remaining -= 1
            else:
                for k in range(ncand):
                    kv[k] = cands[k].value
                    kw[k] = w[cands[k].col]
                table = <double*> malloc((ncand + 1) * (room + 1) * sizeof(double))
                _knapsack(kv, kw, ncand, room, table, chosen)
                free(table)
                table = NULL
                for k in range(ncand):
                    if chosen[k]:
                        assign[cands[k].col] = r
                        if remaining >= 0:
                            remaining -= kw[k]
    finally:
        free(cands)
        free(kv)
        free(kw)
        free(chosen)
    return assign


cdef class _Oracle:
    cdef Py_ssize_t n_rows, m, n_states
    cdef long[:] radix
    cdef double[:] memo
    cdef double[:] values
    cdef long[:] weights
    cdef unsigned char[:, :] avail

    cdef double best(self, Py_ssize_t j, long state, long[:] caps_left):
        cdef Py_ssize_t idx = j * self.n_states + state
        if j == self.m:
            return 0.0
        if not isnan(self.memo[idx]):
            return self.memo[idx]
        cdef double out = self.best(j + 1, state, caps_left)
        cdef double cand
        cdef Py_ssize_t r
        cdef long w = self.weights[j], left
        for r in range(self.n_rows):
            if self.avail[r, j]:
                left = (state // self.radix[r]) % (caps_left[r] + 1)
                if left >= w:
                    cand = self.values[j] + self.best(j + 1, state - w * self.radix[r], caps_left)
                    if cand > out:
                        out = cand
        self.memo[idx] = out
        return out


def oracle_assign(avail, values, weights, caps):
    cdef cnp.ndarray[cnp.uint8_t, ndim=2] a = np.ascontiguousarray(avail, dtype=np.uint8)
    cdef Py_ssize_t n_rows = a.shape[0], m = a.shape[1], r, j
    v = np.ascontiguousarray(values, dtype=np.float64)
    w = np.ascontiguousarray(weights, dtype=np.int64).astype(np.int_)
    clipped = np.zeros(n_rows, dtype=np.int_)
    cdef long reach
    for r in range(n_rows):
        reach = 0
        for j in range(m):
            if a[r, j]:
                reach += w[j]
        clipped[r] = max(0, min(int(caps[r]), reach))
    radix = np.ones(n_rows, dtype=np.int_)
    n_states = 1
    for r in range(n_rows):
        radix[r] = n_states
        n_states *= int(clipped[r]) + 1
    cdef _Oracle o = _Oracle()
    o.n_rows = n_rows
    o.m = m
    o.n_states = n_states
    o.radix = radix
    o.values = v
    o.weights = w
    o.avail = a
    o.memo = np.full((m + 1) * n_states, NAN)
    cdef long[:] caps_left = clipped
    cdef long state = 0
    for r in range(n_rows):
        state += clipped[r] * radix[r]
    cdef double total = o.best(0, state, caps_left)
    assign = np.full(m, -1, dtype=np.int64)
    cdef double target
    cdef long left, wj
    for j in range(m):
        target = o.best(j, state, caps_left)
        wj = w[j]
        for r in range(n_rows):
            if a[r, j]:
                left = (state // radix[r]) % (clipped[r] + 1)
                if left >= wj and _close(v[j] + o.best(j + 1, state - wj * radix[r], caps_left), target):
                    assign[j] = r
                    state -= wj * radix[r]
                    break
    return total, assign
