# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops for depthwise convolution and im2col/col2im.

All arrays are C-contiguous, NCHW. Each output element is accumulated in a
fixed loop order, so results are bit-reproducible run to run.
"""
import numpy as np
from cython cimport floating


cdef inline object _dtype(floating dummy):
    if floating is float:
        return np.float32
    return np.float64


def dwconv_forward(floating[:, :, :, ::1] x, floating[:, :, ::1] w, int stride, int pad):
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t k = w.shape[1]
    cdef Py_ssize_t Ho = (H + 2 * pad - k) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * pad - k) // stride + 1
    out_arr = np.zeros((N, C, Ho, Wo), dtype=_dtype(x[0, 0, 0, 0]))
    cdef floating[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t n, c, oy, ox, ky, kx, iy, ix
    cdef floating acc
    for n in range(N):
        for c in range(C):
            for oy in range(Ho):
                for ox in range(Wo):
                    acc = 0
                    for ky in range(k):
                        iy = oy * stride - pad + ky
                        if iy < 0 or iy >= H:
                            continue
                        for kx in range(k):
                            ix = ox * stride - pad + kx
                            if ix < 0 or ix >= W:
                                continue
                            acc = acc + x[n, c, iy, ix] * w[c, ky, kx]
                    out[n, c, oy, ox] = acc
    return out_arr


def dwconv_backward(floating[:, :, :, ::1] x, floating[:, :, ::1] w,
                    floating[:, :, :, ::1] gout, int stride, int pad):
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t k = w.shape[1]
    cdef Py_ssize_t Ho = gout.shape[2], Wo = gout.shape[3]
    dt = _dtype(x[0, 0, 0, 0])
    gx_arr = np.zeros((N, C, H, W), dtype=dt)
    gw_arr = np.zeros((C, k, k), dtype=dt)
    cdef floating[:, :, :, ::1] gx = gx_arr
    cdef floating[:, :, ::1] gw = gw_arr
    cdef Py_ssize_t n, c, oy, ox, ky, kx, iy, ix
    cdef floating g
    for c in range(C):
        for n in range(N):
            for oy in range(Ho):
                for ox in range(Wo):
                    g = gout[n, c, oy, ox]
                    for ky in range(k):
                        iy = oy * stride - pad + ky
                        if iy < 0 or iy >= H:
                            continue
                        for kx in range(k):
                            ix = ox * stride - pad + kx
                            if ix < 0 or ix >= W:
                                continue
                            gx[n, c, iy, ix] += g * w[c, ky, kx]
                            gw[c, ky, kx] += g * x[n, c, iy, ix]
    return gx_arr, gw_arr


def im2col(floating[:, :, :, ::1] x, int k, int stride, int pad):
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Ho = (H + 2 * pad - k) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * pad - k) // stride + 1
    cols_arr = np.zeros((N, C * k * k, Ho * Wo), dtype=_dtype(x[0, 0, 0, 0]))
    cdef floating[:, :, ::1] cols = cols_arr
    cdef Py_ssize_t n, c, ky, kx, oy, ox, iy, ix, row
    for n in range(N):
        for c in range(C):
            for ky in range(k):
                for kx in range(k):
                    row = (c * k + ky) * k + kx
                    for oy in range(Ho):
                        iy = oy * stride - pad + ky
                        if iy < 0 or iy >= H:
                            continue
                        for ox in range(Wo):
                            ix = ox * stride - pad + kx
                            if ix < 0 or ix >= W:
                                continue
                            cols[n, row, oy * Wo + ox] = x[n, c, iy, ix]
    return cols_arr


def col2im(floating[:, :, ::1] cols, Py_ssize_t C, Py_ssize_t H, Py_ssize_t W,
           int k, int stride, int pad):
    cdef Py_ssize_t N = cols.shape[0]
    cdef Py_ssize_t Ho = (H + 2 * pad - k) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * pad - k) // stride + 1
    x_arr = np.zeros((N, C, H, W), dtype=_dtype(cols[0, 0, 0]))
    cdef floating[:, :, :, ::1] x = x_arr
    cdef Py_ssize_t n, c, ky, kx, oy, ox, iy, ix, row
    for n in range(N):
        for c in range(C):
            for ky in range(k):
                for kx in range(k):
                    row = (c * k + ky) * k + kx
                    for oy in range(Ho):
                        iy = oy * stride - pad + ky
                        if iy < 0 or iy >= H:
                            continue
                        for ox in range(Wo):
                            ix = ox * stride - pad + kx
                            if ix < 0 or ix >= W:
                                continue
                            x[n, c, iy, ix] += cols[n, row, oy * Wo + ox]
    return x_arr
