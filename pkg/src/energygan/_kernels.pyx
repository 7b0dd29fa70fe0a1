# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: patch unfolding for convolution and raster sampling.

Every routine here has a numpy twin in ``_kernels_py`` with the same
signature and the same floating-point operation order, so both backends
return bit-identical arrays.
"""
from cython cimport floating
from libc.math cimport floor

import numpy as np


def im2col(floating[:, :, :, ::1] xp, Py_ssize_t k, Py_ssize_t stride,
           Py_ssize_t oh, Py_ssize_t ow):
    cdef Py_ssize_t n_batch = xp.shape[0], n_chan = xp.shape[1]
    cdef Py_ssize_t n, c, ki, kj, oy, ox, row, col
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.empty((n_chan * k * k, n_batch * oh * ow), dtype=dtype)
    cdef floating[:, ::1] out = out_arr
    with nogil:
        for c in range(n_chan):
            for ki in range(k):
                for kj in range(k):
                    row = (c * k + ki) * k + kj
                    for n in range(n_batch):
                        for oy in range(oh):
                            col = (n * oh + oy) * ow
                            for ox in range(ow):
                                out[row, col + ox] = xp[n, c, ki + stride * oy, kj + stride * ox]
    return out_arr


def col2im(floating[:, ::1] cols, Py_ssize_t k, Py_ssize_t stride,
           Py_ssize_t oh, Py_ssize_t ow, tuple padded_shape):
    cdef Py_ssize_t n_batch = padded_shape[0], n_chan = padded_shape[1]
    cdef Py_ssize_t n, c, ki, kj, oy, ox, row, col
    dtype = np.float32 if floating is float else np.float64
    xp_arr = np.zeros(padded_shape, dtype=dtype)
    cdef floating[:, :, :, ::1] xp = xp_arr
    # kernel offsets outermost: same accumulation order as the numpy twin
    with nogil:
        for ki in range(k):
            for kj in range(k):
                for n in range(n_batch):
                    for c in range(n_chan):
                        row = (c * k + ki) * k + kj
                        for oy in range(oh):
                            col = (n * oh + oy) * ow
                            for ox in range(ow):
                                xp[n, c, ki + stride * oy, kj + stride * ox] += cols[row, col + ox]
    return xp_arr


def sample_bilinear(double[:, :, ::1] src, double[::1] xs, double[::1] ys):
    cdef Py_ssize_t h = src.shape[0], w = src.shape[1], n_chan = src.shape[2]
    cdef Py_ssize_t m = xs.shape[0], i, ch, x0, y0, x1, y1
    cdef double fx, fy, w00, w10, w01, w11, a, b, c, d, xf, yf
    cdef bint in00, in10, in01, in11
    out_arr = np.zeros((m, n_chan), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    with nogil:
        for i in range(m):
            xf = floor(xs[i])
            yf = floor(ys[i])
            fx = xs[i] - xf
            fy = ys[i] - yf
            x0 = <Py_ssize_t>xf
            y0 = <Py_ssize_t>yf
            x1 = x0 + 1
            y1 = y0 + 1
            if x1 < 0 or y1 < 0 or x0 >= w or y0 >= h:
                continue
            w00 = (1.0 - fx) * (1.0 - fy)
            w10 = fx * (1.0 - fy)
            w01 = (1.0 - fx) * fy
            w11 = fx * fy
            in00 = x0 >= 0 and y0 >= 0
            in10 = x1 < w and y0 >= 0
            in01 = x0 >= 0 and y1 < h
            in11 = x1 < w and y1 < h
            for ch in range(n_chan):
                a = src[y0, x0, ch] if in00 else 0.0
                b = src[y0, x1, ch] if in10 else 0.0
                c = src[y1, x0, ch] if in01 else 0.0
                d = src[y1, x1, ch] if in11 else 0.0
                out[i, ch] = ((w00 * a + w10 * b) + w01 * c) + w11 * d
    return out_arr


def sample_nearest(double[:, :, ::1] src, double[::1] xs, double[::1] ys):
    cdef Py_ssize_t h = src.shape[0], w = src.shape[1], n_chan = src.shape[2]
    cdef Py_ssize_t m = xs.shape[0], i, ch, ix, iy
    out_arr = np.zeros((m, n_chan), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    with nogil:
        for i in range(m):
            ix = <Py_ssize_t>floor(xs[i] + 0.5)
            iy = <Py_ssize_t>floor(ys[i] + 0.5)
            if ix < 0 or iy < 0 or ix >= w or iy >= h:
                continue
            for ch in range(n_chan):
                out[i, ch] = src[iy, ix, ch]
    return out_arr
