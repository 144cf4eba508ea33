"""Hot-loop kernels with a compiled backend and a numpy fallback.

The Cython extension ``tuni._kernels`` is used when it was built; otherwise
(or when ``TUNI_KERNELS=numpy`` is set) the vectorized numpy versions below
are used. Both backends compute the same quantities; they can differ in the
last bits because the summation order differs.
"""
from __future__ import annotations

import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

try:
    if os.environ.get("TUNI_KERNELS", "").lower() == "numpy":
        raise ImportError("compiled kernels disabled by TUNI_KERNELS")
    from tuni import _kernels as _ext
except ImportError:
    _ext = None

BACKEND = "cython" if _ext is not None else "numpy"


def _out_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def _pad(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


# -- numpy fallback -----------------------------------------------------------

def dwconv_forward_np(x, w, stride, pad):
    N, C, H, W = x.shape
    k = w.shape[1]
    Ho, Wo = _out_size(H, k, stride, pad), _out_size(W, k, stride, pad)
    xp = _pad(x, pad)
    out = np.zeros((N, C, Ho, Wo), dtype=x.dtype)
    for ky in range(k):
        for kx in range(k):
            patch = xp[:, :, ky:ky + stride * (Ho - 1) + 1:stride, kx:kx + stride * (Wo - 1) + 1:stride]
            out += patch * w[None, :, ky, kx, None, None]
    return out


def dwconv_backward_np(x, w, gout, stride, pad):
    N, C, H, W = x.shape
    k = w.shape[1]
    Ho, Wo = gout.shape[2:]
    xp = _pad(x, pad)
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(w)
    for ky in range(k):
        for kx in range(k):
            ys = slice(ky, ky + stride * (Ho - 1) + 1, stride)
            xs = slice(kx, kx + stride * (Wo - 1) + 1, stride)
            gxp[:, :, ys, xs] += gout * w[None, :, ky, kx, None, None]
            gw[:, ky, kx] = np.einsum("nchw,nchw->c", gout, xp[:, :, ys, xs])
    gx = gxp[:, :, pad:pad + H, pad:pad + W] if pad else gxp
    return np.ascontiguousarray(gx), gw


def im2col_np(x, k, stride, pad):
    N, C, H, W = x.shape
    Ho, Wo = _out_size(H, k, stride, pad), _out_size(W, k, stride, pad)
    win = sliding_window_view(_pad(x, pad), (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    # win: N, C, Ho, Wo, k, k -> N, C, k, k, Ho, Wo
    cols = win[:, :, :Ho, :Wo].transpose(0, 1, 4, 5, 2, 3)
    return np.ascontiguousarray(cols).reshape(N, C * k * k, Ho * Wo)


def col2im_np(cols, C, H, W, k, stride, pad):
    N = cols.shape[0]
    Ho, Wo = _out_size(H, k, stride, pad), _out_size(W, k, stride, pad)
    c6 = cols.reshape(N, C, k, k, Ho, Wo)
    xp = np.zeros((N, C, H + 2 * pad, W + 2 * pad), dtype=cols.dtype)
    for ky in range(k):
        for kx in range(k):
            xp[:, :, ky:ky + stride * (Ho - 1) + 1:stride, kx:kx + stride * (Wo - 1) + 1:stride] += c6[:, :, ky, kx]
    return np.ascontiguousarray(xp[:, :, pad:pad + H, pad:pad + W])


# -- dispatch -----------------------------------------------------------------

def dwconv_forward(x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> np.ndarray:
    """Depthwise cross-correlation. ``x`` is (N, C, H, W), ``w`` is (C, k, k)."""
    if _ext is not None:
        return _ext.dwconv_forward(np.ascontiguousarray(x), np.ascontiguousarray(w, dtype=x.dtype), stride, pad)
    return dwconv_forward_np(x, w, stride, pad)


def dwconv_backward(x, w, gout, stride, pad):
    """Return (grad_x, grad_w) for :func:`dwconv_forward`."""
    if _ext is not None:
        return _ext.dwconv_backward(
            np.ascontiguousarray(x),
            np.ascontiguousarray(w, dtype=x.dtype),
            np.ascontiguousarray(gout, dtype=x.dtype),
            stride,
            pad,
        )
    return dwconv_backward_np(x, w, gout, stride, pad)


def im2col(x: np.ndarray, k: int, stride: int, pad: int) -> np.ndarray:
    """Unfold (N, C, H, W) into (N, C*k*k, Ho*Wo) patch columns."""
    if _ext is not None:
        return _ext.im2col(np.ascontiguousarray(x), k, stride, pad)
    return im2col_np(x, k, stride, pad)


def col2im(cols: np.ndarray, C: int, H: int, W: int, k: int, stride: int, pad: int) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add columns back to (N, C, H, W)."""
    if _ext is not None:
        return _ext.col2im(np.ascontiguousarray(cols), C, H, W, k, stride, pad)
    return col2im_np(cols, C, H, W, k, stride, pad)
