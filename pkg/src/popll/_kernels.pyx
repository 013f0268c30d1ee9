# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-example kernels; same contracts as ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport log, INFINITY

cnp.import_array()

cdef double LOG_CLAMP = log(1e-12)
cdef double PROB_CLAMP = 1e-12

WEIGHTED_CE, CC, LWS, CLPL = 0, 1, 2, 3


cdef inline Py_ssize_t _lead(const double* s, const cnp.uint8_t* m, Py_ssize_t c) noexcept nogil:
    # lowest index among the largest masked entries; 0 for an empty mask
    cdef Py_ssize_t j, best = 0
    cdef double v, top = -INFINITY
    for j in range(c):
        v = s[j] if m[j] else -INFINITY
        if v > top:
            top = v
            best = j
    return best


def restricted_argmax(scores, mask):
    cdef const double[:, ::1] s = np.ascontiguousarray(scores, dtype=np.float64)
    cdef const cnp.uint8_t[:, ::1] m = np.ascontiguousarray(mask, dtype=np.bool_).view(np.uint8)
    cdef Py_ssize_t i, n = s.shape[0], c = s.shape[1]
    out = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] o = out
    if c == 0:
        return np.zeros(n, dtype=np.int64)
    with nogil:
        for i in range(n):
            o[i] = _lead(&s[i, 0], &m[i, 0], c)
    return out


def purify(probs, mask, double threshold):
    cdef const double[:, ::1] p = np.ascontiguousarray(probs, dtype=np.float64)
    new = np.array(mask, dtype=np.bool_, order="C", copy=True)
    cdef cnp.uint8_t[:, ::1] m = new.view(np.uint8)
    cdef Py_ssize_t i, j, lead, n = p.shape[0], c = p.shape[1]
    removed = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] r = removed
    cdef cnp.int64_t count
    cdef cnp.uint8_t drop
    cdef double top
    with nogil:
        for i in range(n):
            lead = _lead(&p[i, 0], &m[i, 0], c) if c else 0
            top = p[i, lead]
            count = 0
            for j in range(c):
                drop = m[i, j] & (j != lead) & (top - p[i, j] >= threshold)
                m[i, j] = m[i, j] & (not drop)
                count += drop
            r[i] = count
    return new, removed


def normalize_weights(scores, mask):
    cdef const double[:, ::1] s = np.ascontiguousarray(scores, dtype=np.float64)
    cdef const cnp.uint8_t[:, ::1] m = np.ascontiguousarray(mask, dtype=np.bool_).view(np.uint8)
    cdef Py_ssize_t i, j, n = s.shape[0], c = s.shape[1]
    out = np.empty((n, c), dtype=np.float64)
    cdef double[:, ::1] w = out
    cdef double total, inv
    cdef Py_ssize_t size
    with nogil:
        for i in range(n):
            total = 0.0
            size = 0
            for j in range(c):
                # arithmetic masking: a data-dependent branch here mispredicts
                total += s[i, j] * m[i, j]
                size += m[i, j]
            if total > 0:
                for j in range(c):
                    w[i, j] = s[i, j] * m[i, j] / total
            else:
                inv = 1.0 / size
                for j in range(c):
                    w[i, j] = inv * m[i, j]
    return out


def loss_grad(int kind, logits, logp, probs, mask, weights, double beta):
    if kind not in (0, 1, 2, 3):
        raise ValueError(f"unknown loss kernel {kind}")
    cdef const double[:, ::1] z = np.ascontiguousarray(logits, dtype=np.float64)
    cdef const double[:, ::1] lp = np.ascontiguousarray(logp, dtype=np.float64)
    cdef const double[:, ::1] p = np.ascontiguousarray(probs, dtype=np.float64)
    cdef const cnp.uint8_t[:, ::1] m = np.ascontiguousarray(mask, dtype=np.bool_).view(np.uint8)
    cdef const double[:, ::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef Py_ssize_t i, j, n = p.shape[0], c = p.shape[1], size
    loss_arr = np.zeros(n, dtype=np.float64)
    grad_arr = np.zeros((n, c), dtype=np.float64)
    cdef double[::1] L = loss_arr
    cdef double[:, ::1] G = grad_arr
    cdef double acc, asum, total, gp, outside, rest, h, mean_in
    with nogil:
        for i in range(n):
            if kind == 0 or kind == 2:
                acc = 0.0
                asum = 0.0
                for j in range(c):
                    if kind == 2 and not m[i, j]:
                        continue
                    acc -= w[i, j] * (lp[i, j] if lp[i, j] > LOG_CLAMP else LOG_CLAMP)
                    if lp[i, j] > LOG_CLAMP:
                        asum += w[i, j]
                for j in range(c):
                    G[i, j] = p[i, j] * asum
                    if (kind == 0 or m[i, j]) and lp[i, j] > LOG_CLAMP:
                        G[i, j] -= w[i, j]
                if kind == 2:
                    size = 0
                    for j in range(c):
                        size += m[i, j]
                    if size < c:
                        outside = 1.0 / (c - size)
                        gp = 0.0
                        for j in range(c):
                            if not m[i, j]:
                                rest = 1.0 - p[i, j]
                                acc -= beta * outside * log(rest if rest > PROB_CLAMP else PROB_CLAMP)
                                if rest > PROB_CLAMP:
                                    gp += beta * outside / rest * p[i, j]
                        for j in range(c):
                            G[i, j] -= p[i, j] * gp
                            if not m[i, j]:
                                rest = 1.0 - p[i, j]
                                if rest > PROB_CLAMP:
                                    G[i, j] += p[i, j] * beta * outside / rest
                L[i] = acc
            elif kind == 1:
                total = 0.0
                for j in range(c):
                    total += p[i, j] * m[i, j]
                if total > PROB_CLAMP:
                    L[i] = -log(total)
                    for j in range(c):
                        G[i, j] = p[i, j] - p[i, j] * m[i, j] / total
                else:
                    L[i] = -log(PROB_CLAMP)
            else:
                size = 0
                mean_in = 0.0
                for j in range(c):
                    if m[i, j]:
                        size += 1
                        mean_in += z[i, j]
                mean_in /= size
                h = 1.0 - mean_in
                if h < 0:
                    h = 0.0
                acc = h * h
                for j in range(c):
                    if m[i, j]:
                        G[i, j] = -2.0 * h / size
                    else:
                        gp = 1.0 + z[i, j]
                        if gp > 0:
                            acc += gp * gp
                            G[i, j] = 2.0 * gp
                L[i] = acc
    return loss_arr, grad_arr
