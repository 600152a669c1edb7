# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot kernels in ``_kernels_py``.

Same signatures and layouts; see the numpy module for semantics.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()


def conv_out_size(Py_ssize_t size, Py_ssize_t k, Py_ssize_t stride):
    return (size - k) // stride + 1


def im2col(double[:, :, :, ::1] x, Py_ssize_t k, Py_ssize_t stride):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = (h - k) // stride + 1, ow = (w - k) // stride + 1
    out_arr = np.empty((n * oh * ow, c * k * k), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t s, i, j, ch, ki, kj, row, col
    with nogil:
        for s in range(n):
            for i in range(oh):
                for j in range(ow):
                    row = (s * oh + i) * ow + j
                    col = 0
                    for ch in range(c):
                        for ki in range(k):
                            for kj in range(k):
                                out[row, col] = x[s, ch, i * stride + ki, j * stride + kj]
                                col += 1
    return out_arr


def col2im(double[:, ::1] cols, tuple x_shape, Py_ssize_t k, Py_ssize_t stride):
    cdef Py_ssize_t n = x_shape[0], c = x_shape[1], h = x_shape[2], w = x_shape[3]
    cdef Py_ssize_t oh = (h - k) // stride + 1, ow = (w - k) // stride + 1
    dx_arr = np.zeros((n, c, h, w), dtype=np.float64)
    cdef double[:, :, :, ::1] dx = dx_arr
    cdef Py_ssize_t s, i, j, ch, ki, kj, row, col
    with nogil:
        for s in range(n):
            for i in range(oh):
                for j in range(ow):
                    row = (s * oh + i) * ow + j
                    col = 0
                    for ch in range(c):
                        for ki in range(k):
                            for kj in range(k):
                                dx[s, ch, i * stride + ki, j * stride + kj] += cols[row, col]
                                col += 1
    return dx_arr


def maxpool_forward(double[:, :, :, ::1] x, Py_ssize_t k):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1]
    cdef Py_ssize_t oh = x.shape[2] // k, ow = x.shape[3] // k
    out_arr = np.empty((n, c, oh, ow), dtype=np.float64)
    arg_arr = np.empty((n, c, oh, ow), dtype=np.int64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef cnp.int64_t[:, :, :, ::1] arg = arg_arr
    cdef Py_ssize_t s, ch, i, j, ki, kj, best_idx
    cdef double best, v
    with nogil:
        for s in range(n):
            for ch in range(c):
                for i in range(oh):
                    for j in range(ow):
                        best = x[s, ch, i * k, j * k]
                        best_idx = 0
                        for ki in range(k):
                            for kj in range(k):
                                v = x[s, ch, i * k + ki, j * k + kj]
                                if v > best:
                                    best = v
                                    best_idx = ki * k + kj
                        out[s, ch, i, j] = best
                        arg[s, ch, i, j] = best_idx
    return out_arr, arg_arr


def maxpool_backward(double[:, :, :, ::1] g, cnp.int64_t[:, :, :, ::1] arg,
                     tuple x_shape, Py_ssize_t k):
    cdef Py_ssize_t n = g.shape[0], c = g.shape[1], oh = g.shape[2], ow = g.shape[3]
    dx_arr = np.zeros(x_shape, dtype=np.float64)
    cdef double[:, :, :, ::1] dx = dx_arr
    cdef Py_ssize_t s, ch, i, j, a
    with nogil:
        for s in range(n):
            for ch in range(c):
                for i in range(oh):
                    for j in range(ow):
                        a = arg[s, ch, i, j]
                        dx[s, ch, i * k + a // k, j * k + a % k] = g[s, ch, i, j]
    return dx_arr


cdef inline double _sign(double t) noexcept nogil:
    # branch-free: the sign of pixel differences is unpredictable
    return <double>(t > 0) - <double>(t < 0)


def total_variation(double[:, :, :, ::1] x):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    grad_arr = np.zeros((n, c, h, w), dtype=np.float64)
    cdef double[:, :, :, ::1] grad = grad_arr
    cdef double total = 0.0, d, sg
    cdef double inv_n = 1.0 / n
    cdef Py_ssize_t s, ch, i, j
    with nogil:
        for s in range(n):
            for ch in range(c):
                for i in range(h):
                    for j in range(w - 1):
                        d = x[s, ch, i, j + 1] - x[s, ch, i, j]
                        total += fabs(d)
                        sg = _sign(d) * inv_n
                        grad[s, ch, i, j + 1] += sg
                        grad[s, ch, i, j] -= sg
                for i in range(h - 1):
                    for j in range(w):
                        d = x[s, ch, i + 1, j] - x[s, ch, i, j]
                        total += fabs(d)
                        sg = _sign(d) * inv_n
                        grad[s, ch, i + 1, j] += sg
                        grad[s, ch, i, j] -= sg
    return total * inv_n, grad_arr
