# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled implementation of the hot kernels.

Mirrors ``_numpy.py`` exactly (same contracts, same conventions); the
build is optional and the package falls back to the numpy backend when
this module is unavailable.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log

cnp.import_array()

BACKEND = "cython"


def row_softmax(double[:, ::1] scores):
    """Row-wise softmax with per-row max subtraction."""
    cdef Py_ssize_t n = scores.shape[0]
    cdef Py_ssize_t m = scores.shape[1]
    out_arr = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double row_max, total
    for i in range(n):
        row_max = scores[i, 0]
        for j in range(1, m):
            if scores[i, j] > row_max:
                row_max = scores[i, j]
        total = 0.0
        for j in range(m):
            out[i, j] = exp(scores[i, j] - row_max)
            total += out[i, j]
        for j in range(m):
            out[i, j] /= total
    return out_arr


def kl_grad_from_logits(double[:, ::1] scores, double[:, ::1] target):
    """Mean row-KL(target || softmax(scores)) and its gradient in the logits."""
    cdef Py_ssize_t b = scores.shape[0]
    cdef Py_ssize_t m = scores.shape[1]
    grad_arr = np.empty((b, m), dtype=np.float64)
    cdef double[:, ::1] grad = grad_arr
    cdef Py_ssize_t i, j
    cdef double row_max, total, lse, log_p, value, inv_b, t
    value = 0.0
    inv_b = 1.0 / b
    for i in range(b):
        row_max = scores[i, 0]
        for j in range(1, m):
            if scores[i, j] > row_max:
                row_max = scores[i, j]
        total = 0.0
        for j in range(m):
            total += exp(scores[i, j] - row_max)
        lse = log(total)
        for j in range(m):
            log_p = scores[i, j] - row_max - lse
            t = target[i, j]
            if t > 0.0:
                value += t * (log(t) - log_p)
            grad[i, j] = (exp(log_p) - t) * inv_b
    return value * inv_b, grad_arr


def rbf_pair_sum(double[:, ::1] feats):
    """Sum of exp(-2 ||f_a - f_b||^2) over all ordered pairs, self-pairs included.

    The kernel is symmetric, so each unordered pair is evaluated once and
    counted twice; the n self-pairs each contribute exactly 1.
    """
    cdef Py_ssize_t n = feats.shape[0]
    cdef Py_ssize_t d = feats.shape[1]
    cdef Py_ssize_t a, b, k
    cdef double total = 0.0
    cdef double d2, diff
    for a in range(n):
        for b in range(a + 1, n):
            d2 = 0.0
            for k in range(d):
                diff = feats[a, k] - feats[b, k]
                d2 += diff * diff
            total += exp(-2.0 * d2)
    return 2.0 * total + n
