# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-step decoding kernels; same contracts as ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp
from libc.stdint cimport uint64_t
from libc.stdlib cimport malloc, free, qsort

cnp.import_array()

cdef struct Entry:
    double w
    Py_ssize_t idx


cdef int _cmp_entry(const void *a, const void *b) noexcept nogil:
    cdef const Entry *x = <const Entry *> a
    cdef const Entry *y = <const Entry *> b
    if x.w > y.w:
        return -1
    if x.w < y.w:
        return 1
    if x.idx < y.idx:
        return -1
    if x.idx > y.idx:
        return 1
    return 0


cdef inline uint64_t _splitmix_next(uint64_t *state) noexcept nogil:
    cdef uint64_t z
    state[0] += <uint64_t> 0x9E3779B97F4A7C15
    z = state[0]
    z = (z ^ (z >> 30)) * <uint64_t> 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * <uint64_t> 0x94D049BB133111EB
    return z ^ (z >> 31)


cdef Py_ssize_t _nucleus(const double[::1] logits, double temperature, double top_p,
                         Entry *entries, double *cum) noexcept nogil:
    """Fill sorted entries and cumulative weights; return the last nucleus index."""
    cdef Py_ssize_t n = logits.shape[0]
    cdef Py_ssize_t i
    cdef double m = logits[0]
    cdef double acc = 0.0
    cdef double cutoff
    for i in range(1, n):
        if logits[i] > m:
            m = logits[i]
    for i in range(n):
        entries[i].w = exp((logits[i] - m) / temperature)
        entries[i].idx = i
    qsort(entries, n, sizeof(Entry), _cmp_entry)
    for i in range(n):
        acc = acc + entries[i].w
        cum[i] = acc
    cutoff = top_p * cum[n - 1]
    for i in range(n):
        if cum[i] >= cutoff:
            return i
    return n - 1


def softmax(const double[::1] logits, double temperature=1.0):
    cdef Py_ssize_t n = logits.shape[0]
    cdef Py_ssize_t i
    cdef double m = logits[0]
    cdef double total = 0.0
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    for i in range(1, n):
        if logits[i] > m:
            m = logits[i]
    for i in range(n):
        o[i] = exp((logits[i] - m) / temperature)
        total += o[i]
    for i in range(n):
        o[i] = o[i] / total
    return out


def nucleus_probs(const double[::1] logits, double temperature, double top_p):
    cdef Py_ssize_t n = logits.shape[0]
    cdef Py_ssize_t j, last
    cdef Entry *entries = <Entry *> malloc(n * sizeof(Entry))
    cdef double *cum = <double *> malloc(n * sizeof(double))
    out = np.zeros(n, dtype=np.float64)
    cdef double[::1] o = out
    if entries == NULL or cum == NULL:
        free(entries)
        free(cum)
        raise MemoryError()
    try:
        last = _nucleus(logits, temperature, top_p, entries, cum)
        for j in range(last + 1):
            o[entries[j].idx] = entries[j].w / cum[last]
    finally:
        free(entries)
        free(cum)
    return out


def sample_nucleus(const double[::1] logits, double temperature, double top_p, double u):
    cdef Py_ssize_t n = logits.shape[0]
    cdef Py_ssize_t j, last
    cdef Py_ssize_t chosen = -1
    cdef double target
    cdef Entry *entries = <Entry *> malloc(n * sizeof(Entry))
    cdef double *cum = <double *> malloc(n * sizeof(double))
    if entries == NULL or cum == NULL:
        free(entries)
        free(cum)
        raise MemoryError()
    try:
        last = _nucleus(logits, temperature, top_p, entries, cum)
        target = u * cum[last]
        for j in range(last + 1):
            if cum[j] > target:
                chosen = entries[j].idx
                break
        if chosen < 0:
            chosen = entries[last].idx
    finally:
        free(entries)
        free(cum)
    return chosen


def permutation(uint64_t seed, Py_ssize_t n):
    cdef uint64_t state = seed
    cdef Py_ssize_t i, j
    cdef cnp.int64_t tmp
    out = np.arange(n, dtype=np.int64)
    cdef cnp.int64_t[::1] p = out
    for i in range(n - 1, 0, -1):
        j = <Py_ssize_t> (_splitmix_next(&state) % <uint64_t> (i + 1))
        tmp = p[i]
        p[i] = p[j]
        p[j] = tmp
    return out
