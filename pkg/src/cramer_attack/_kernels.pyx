# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_fallback.py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log1p, INFINITY

cnp.import_array()


cdef inline double _lse2(double a, double b) nogil:
    if a == -INFINITY:
        return b
    if b == -INFINITY:
        return a
    if a > b:
        return a + log1p(exp(b - a))
    return b + log1p(exp(a - b))


def ctc_alpha_beta(logprobs, ext_labels):
    cdef double[:, ::1] lp = np.ascontiguousarray(logprobs, dtype=np.float64)
    cdef long long[::1] ext = np.ascontiguousarray(ext_labels, dtype=np.int64)
    cdef Py_ssize_t T = lp.shape[0]
    cdef Py_ssize_t S = ext.shape[0]
    alpha_arr = np.full((T, S), -np.inf)
    beta_arr = np.full((T, S), -np.inf)
    cdef double[:, ::1] alpha = alpha_arr
    cdef double[:, ::1] beta = beta_arr
    skip_arr = np.zeros(S, dtype=np.uint8)
    cdef unsigned char[::1] skip = skip_arr
    cdef Py_ssize_t t, s
    cdef double acc

    for s in range(2, S):
        skip[s] = ext[s] != 0 and ext[s] != ext[s - 2]

    with nogil:
        alpha[0, 0] = lp[0, ext[0]]
        if S > 1:
            alpha[0, 1] = lp[0, ext[1]]
        for t in range(1, T):
            for s in range(S):
                acc = alpha[t - 1, s]
                if s >= 1:
                    acc = _lse2(acc, alpha[t - 1, s - 1])
                if skip[s]:
                    acc = _lse2(acc, alpha[t - 1, s - 2])
                if acc != -INFINITY:
                    alpha[t, s] = acc + lp[t, ext[s]]

        beta[T - 1, S - 1] = 0.0
        if S > 1:
            beta[T - 1, S - 2] = 0.0
        for t in range(T - 2, -1, -1):
            for s in range(S):
                acc = -INFINITY
                if beta[t + 1, s] != -INFINITY:
                    acc = beta[t + 1, s] + lp[t + 1, ext[s]]
                if s + 1 < S and beta[t + 1, s + 1] != -INFINITY:
                    acc = _lse2(acc, beta[t + 1, s + 1] + lp[t + 1, ext[s + 1]])
                if s + 2 < S and skip[s + 2] and beta[t + 1, s + 2] != -INFINITY:
                    acc = _lse2(acc, beta[t + 1, s + 2] + lp[t + 1, ext[s + 2]])
                beta[t, s] = acc
    return alpha_arr, beta_arr


def levinson_durbin(r, int order):
    cdef double[::1] rv = np.ascontiguousarray(r, dtype=np.float64)
    a_arr = np.zeros(order + 1)
    k_arr = np.zeros(order)
    prev_arr = np.zeros(order + 1)
    cdef double[::1] a = a_arr
    cdef double[::1] k = k_arr
    cdef double[::1] prev = prev_arr
    cdef double err = rv[0]
    cdef double acc, ki
    cdef int i, j
    a[0] = 1.0
    for i in range(1, order + 1):
        acc = rv[i]
        for j in range(1, i):
            acc += a[j] * rv[i - j]
        ki = -acc / err
        k[i - 1] = ki
        for j in range(i):
            prev[j] = a[j]
        for j in range(1, i):
            a[j] = prev[j] + ki * prev[i - j]
        a[i] = ki
        err *= 1.0 - ki * ki
    return a_arr, k_arr, err


def edit_distance_table(ref_ids, hyp_ids):
    cdef long long[::1] ref = np.ascontiguousarray(ref_ids, dtype=np.int64)
    cdef long long[::1] hyp = np.ascontiguousarray(hyp_ids, dtype=np.int64)
    cdef Py_ssize_t n = ref.shape[0]
    cdef Py_ssize_t m = hyp.shape[0]
    d_arr = np.zeros((n + 1, m + 1), dtype=np.int64)
    cdef long long[:, ::1] d = d_arr
    cdef Py_ssize_t i, j
    cdef long long sub, ins, dele, best
    for i in range(n + 1):
        d[i, 0] = i
    for j in range(m + 1):
        d[0, j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = d[i - 1, j - 1] + (0 if ref[i - 1] == hyp[j - 1] else 1)
            ins = d[i, j - 1] + 1
            dele = d[i - 1, j] + 1
            best = sub
            if ins < best:
                best = ins
            if dele < best:
                best = dele
            d[i, j] = best
    return d_arr


def overlap_add(frames, Py_ssize_t hop, Py_ssize_t length):
    cdef double[:, ::1] fr = np.ascontiguousarray(frames, dtype=np.float64)
    out_arr = np.zeros(length)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, j, start
    cdef Py_ssize_t flen = fr.shape[1]
    with nogil:
        for i in range(fr.shape[0]):
            start = i * hop
            for j in range(flen):
                out[start + j] += fr[i, j]
    return out_arr
