# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled dense and convolution kernels.

Summation order matches ``_pykernels`` exactly; the extension is built with
``-ffp-contract=off`` so no fused multiply-adds change the rounding.
"""

import numpy as np

NAME = "cython"


def dense_forward(const double[:, ::1] W, const double[:, ::1] x, const double[::1] b):
    cdef Py_ssize_t m = W.shape[0], n = W.shape[1], r = x.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double acc
    out = np.empty((m, r))
    cdef double[:, ::1] y = out
    for i in range(m):
        for j in range(r):
            acc = 0.0
            for k in range(n):
                acc = acc + W[i, k] * x[k, j]
            y[i, j] = acc + b[i]
    return out


def dense_backward(const double[:, ::1] g, const double[:, ::1] x, const double[:, ::1] W):
    cdef Py_ssize_t m = W.shape[0], n = W.shape[1], r = x.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double acc
    gx_arr = np.empty((n, r))
    gW_arr = np.empty((m, n))
    gb_arr = np.empty(m)
    cdef double[:, ::1] gx = gx_arr
    cdef double[:, ::1] gW = gW_arr
    cdef double[::1] gb = gb_arr
    for k in range(n):
        for j in range(r):
            acc = 0.0
            for i in range(m):
                acc = acc + W[i, k] * g[i, j]
            gx[k, j] = acc
    for i in range(m):
        for k in range(n):
            acc = 0.0
            for j in range(r):
                acc = acc + g[i, j] * x[k, j]
            gW[i, k] = acc
        acc = 0.0
        for j in range(r):
            acc = acc + g[i, j]
        gb[i] = acc
    return gx_arr, gW_arr, gb_arr


def conv2d_forward(const double[:, :, :, ::1] x, const double[:, :, :, ::1] F, Py_ssize_t s1, Py_ssize_t s2):
    cdef Py_ssize_t r = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3]
    cdef Py_ssize_t m = F.shape[0], n = F.shape[1], c2 = F.shape[3]
    cdef Py_ssize_t ho = (h - m) // s1 + 1, wo = (w - n) // s2 + 1
    cdef Py_ssize_t b, oi, oj, co, ci, di, dj
    cdef double acc
    out = np.empty((r, ho, wo, c2))
    cdef double[:, :, :, ::1] y = out
    for b in range(r):
        for oi in range(ho):
            for oj in range(wo):
                for co in range(c2):
                    acc = 0.0
                    for ci in range(c):
                        for di in range(m):
                            for dj in range(n):
                                acc = acc + x[b, oi * s1 + di, oj * s2 + dj, ci] * F[di, dj, ci, co]
                    y[b, oi, oj, co] = acc
    return out


def conv2d_backward(const double[:, :, :, ::1] g, const double[:, :, :, ::1] x,
                    const double[:, :, :, ::1] F, Py_ssize_t s1, Py_ssize_t s2):
    cdef Py_ssize_t r = x.shape[0], c = x.shape[3]
    cdef Py_ssize_t m = F.shape[0], n = F.shape[1], c2 = F.shape[3]
    cdef Py_ssize_t ho = g.shape[1], wo = g.shape[2]
    cdef Py_ssize_t b, oi, oj, co, ci, di, dj
    cdef double acc, gv
    gx_arr = np.zeros((r, x.shape[1], x.shape[2], c))
    gF_arr = np.empty((m, n, c, c2))
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef double[:, :, :, ::1] gF = gF_arr
    # per input element, contributions arrive ordered by (di, dj, co)
    for b in range(r):
        for di in range(m):
            for dj in range(n):
                for co in range(c2):
                    for oi in range(ho):
                        for oj in range(wo):
                            gv = g[b, oi, oj, co]
                            for ci in range(c):
                                gx[b, oi * s1 + di, oj * s2 + dj, ci] = (
                                    gx[b, oi * s1 + di, oj * s2 + dj, ci] + gv * F[di, dj, ci, co])
    for di in range(m):
        for dj in range(n):
            for ci in range(c):
                for co in range(c2):
                    acc = 0.0
                    for b in range(r):
                        for oi in range(ho):
                            for oj in range(wo):
                                acc = acc + x[b, oi * s1 + di, oj * s2 + dj, ci] * g[b, oi, oj, co]
                    gF[di, dj, ci, co] = acc
    return gx_arr, gF_arr
