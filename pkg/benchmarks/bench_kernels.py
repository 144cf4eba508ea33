"""Compare the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Shapes follow the desk model at 64x64 input (stage-1 maps are 16x16).
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from tuni import kernels


def cases(rng):
    x1 = rng.standard_normal((8, 16, 16, 16)).astype(np.float32)   # rtl depthwise, stage 1
    w1 = rng.standard_normal((16, 3, 3)).astype(np.float32)
    g1 = rng.standard_normal((8, 16, 16, 16)).astype(np.float32)
    x3 = rng.standard_normal((8, 64, 4, 4)).astype(np.float32)     # stage 3
    w3 = rng.standard_normal((64, 3, 3)).astype(np.float32)
    g3 = rng.standard_normal((8, 64, 4, 4)).astype(np.float32)
    xs = rng.standard_normal((8, 16, 32, 32)).astype(np.float32)   # stem second conv input
    cols = kernels.im2col_np(xs, 3, 2, 1)
    return {
        "dwconv_forward 8x16x16x16": (lambda e: e.dwconv_forward(x1, w1, 1, 1), lambda: kernels.dwconv_forward_np(x1, w1, 1, 1)),
        "dwconv_backward 8x16x16x16": (lambda e: e.dwconv_backward(x1, w1, g1, 1, 1), lambda: kernels.dwconv_backward_np(x1, w1, g1, 1, 1)),
        "dwconv_forward 8x64x4x4": (lambda e: e.dwconv_forward(x3, w3, 1, 1), lambda: kernels.dwconv_forward_np(x3, w3, 1, 1)),
        "dwconv_backward 8x64x4x4": (lambda e: e.dwconv_backward(x3, w3, g3, 1, 1), lambda: kernels.dwconv_backward_np(x3, w3, g3, 1, 1)),
        "im2col 8x16x32x32 k3 s2": (lambda e: e.im2col(xs, 3, 2, 1), lambda: kernels.im2col_np(xs, 3, 2, 1)),
        "col2im 8x16x32x32 k3 s2": (lambda e: e.col2im(cols, 16, 32, 32, 3, 2, 1), lambda: kernels.col2im_np(cols, 16, 32, 32, 3, 2, 1)),
    }


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    ext = kernels._ext
    if ext is None:
        print("compiled kernels unavailable; only the numpy fallback can be timed")
    print(f"{'kernel':30s} {'numpy ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for name, (compiled, fallback) in cases(np.random.default_rng(0)).items():
        t_np = min(timeit.repeat(fallback, number=1, repeat=args.repeat)) * 1e3
        if ext is None:
            print(f"{name:30s} {t_np:10.3f} {'-':>10s} {'-':>8s}")
            continue
        t_cy = min(timeit.repeat(lambda: compiled(ext), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:30s} {t_np:10.3f} {t_cy:10.3f} {t_np / t_cy:7.2f}x")


if __name__ == "__main__":
    main()
