# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: patch extraction / scatter for stride-1 convolution
and 2x nearest upsampling, on channels-last (H x W x C) arrays.
Mirrors ``rseed._pykernels``.

Patch matrices are pixel-major: row ``y*W + x`` holds the ``k*k*C`` inputs
under the kernel at (y, x), ordered (kernel row, kernel column, channel).
"""

import numpy as np
cimport numpy as cnp
from libc.string cimport memcpy, memset

ctypedef fused real:
    float
    double


cdef inline Py_ssize_t _reflect(Py_ssize_t i, Py_ssize_t n) nogil:
    if i < 0:
        return -i
    if i >= n:
        return 2 * (n - 1) - i
    return i


cdef _index_map(Py_ssize_t n, Py_ssize_t p, bint reflect):
    # padded coordinate -> source coordinate, -1 for zero padding
    idx = np.empty(n + 2 * p, dtype=np.intp)
    cdef Py_ssize_t[::1] v = idx
    cdef Py_ssize_t i, s
    for i in range(n + 2 * p):
        s = i - p
        if s < 0 or s >= n:
            v[i] = _reflect(s, n) if reflect else -1
        else:
            v[i] = s
    return idx


def im2col(real[:, :, ::1] x, int k, bint reflect):
    cdef Py_ssize_t H = x.shape[0], W = x.shape[1], C = x.shape[2]
    cdef Py_ssize_t p = (k - 1) // 2
    cdef Py_ssize_t K = k * k * C
    cdef Py_ssize_t ki, kj, y, xx, sy, sx
    cdef Py_ssize_t[::1] ry = _index_map(H, p, reflect)
    cdef Py_ssize_t[::1] rx = _index_map(W, p, reflect)
    cdef size_t nbytes = C * sizeof(real)
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((H * W, K), dtype=dtype)
    cdef real[:, ::1] out = out_arr
    cdef real* dst
    with nogil:
        for y in range(H):
            for xx in range(W):
                dst = &out[y * W + xx, 0]
                for ki in range(k):
                    sy = ry[y + ki]
                    for kj in range(k):
                        sx = rx[xx + kj]
                        if sy < 0 or sx < 0:
                            memset(dst, 0, nbytes)
                        else:
                            memcpy(dst, &x[sy, sx, 0], nbytes)
                        dst += C
    return out_arr


def col2im(real[:, ::1] cols, Py_ssize_t H, Py_ssize_t W, Py_ssize_t C, int k, bint reflect):
    cdef Py_ssize_t p = (k - 1) // 2
    cdef Py_ssize_t ki, kj, y, xx, sy, sx, c
    cdef Py_ssize_t[::1] ry = _index_map(H, p, reflect)
    cdef Py_ssize_t[::1] rx = _index_map(W, p, reflect)
    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros((H, W, C), dtype=dtype)
    cdef real[:, :, ::1] out = out_arr
    cdef real* src
    cdef real* dst
    with nogil:
        for y in range(H):
            for xx in range(W):
                src = &cols[y * W + xx, 0]
                for ki in range(k):
                    sy = ry[y + ki]
                    for kj in range(k):
                        sx = rx[xx + kj]
                        if sy >= 0 and sx >= 0:
                            dst = &out[sy, sx, 0]
                            for c in range(C):
                                dst[c] += src[c]
                        src += C
    return out_arr


def upsample2x(real[:, :, ::1] x):
    cdef Py_ssize_t H = x.shape[0], W = x.shape[1], C = x.shape[2]
    cdef Py_ssize_t y, xx
    cdef size_t nbytes = C * sizeof(real)
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((2 * H, 2 * W, C), dtype=dtype)
    cdef real[:, :, ::1] out = out_arr
    with nogil:
        for y in range(H):
            for xx in range(W):
                memcpy(&out[2 * y, 2 * xx, 0], &x[y, xx, 0], nbytes)
                memcpy(&out[2 * y, 2 * xx + 1, 0], &x[y, xx, 0], nbytes)
            memcpy(&out[2 * y + 1, 0, 0], &out[2 * y, 0, 0], 2 * W * nbytes)
    return out_arr


def upsample2x_backward(real[:, :, ::1] g):
    cdef Py_ssize_t H = g.shape[0] // 2, W = g.shape[1] // 2, C = g.shape[2]
    cdef Py_ssize_t y, xx, c
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((H, W, C), dtype=dtype)
    cdef real[:, :, ::1] out = out_arr
    with nogil:
        for y in range(H):
            for xx in range(W):
                for c in range(C):
                    out[y, xx, c] = ((g[2 * y, 2 * xx, c] + g[2 * y, 2 * xx + 1, c])
                                     + (g[2 * y + 1, 2 * xx, c] + g[2 * y + 1, 2 * xx + 1, c]))
    return out_arr
