"""Finite-difference gradient checks over every primitive op, the fusion
submodules, a full encoder block, the decoder and the training loss."""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from tuni import autodiff as ad
from tuni.autodiff import Tensor, gradcheck
from tuni.encoder import EncoderBlock, EncoderOutput, ModelConfig, RGBRGBLocal, RGBTGlobal, RGBTLocal
from tuni.head import IGNORE, MLPDecoder, SegBatch, total_loss

F64 = np.float64


@dataclass
class CaseResult:
    name: str
    seed: int
    max_rel_err: float
    passed: bool
    n_checked: int


def _t(rng, *shape, lo=None, hi=None) -> Tensor:
    if lo is not None:
        return Tensor(rng.uniform(lo, hi, shape), requires_grad=True, dtype=F64)
    return Tensor(rng.standard_normal(shape), requires_grad=True, dtype=F64)


def _away_from_zero(rng, *shape) -> Tensor:
    """Values bounded away from 0 so kinks (relu, |x|) sit outside the probe step."""
    x = rng.uniform(0.1, 1.0, shape) * rng.choice([-1.0, 1.0], shape)
    return Tensor(x, requires_grad=True, dtype=F64)


def _module_params(module, rng, scale: float = 0.5) -> list[Tensor]:
    """Cast to float64 and redraw weights at a scale where gradients are not vanishingly small."""
    module.astype(F64)
    params = module.parameters()
    for p in params:
        p.data = rng.normal(0.0, scale, p.shape)
        p.requires_grad = True
    return params


def _op_cases() -> dict[str, Callable]:
    c = {}
    c["add"] = lambda r: (ad.add, [_t(r, 2, 3), _t(r, 1, 3)])
    c["sub"] = lambda r: (ad.sub, [_t(r, 2, 3), _t(r, 2, 1)])
    c["mul"] = lambda r: (ad.mul, [_t(r, 2, 3), _t(r, 2, 3)])
    c["div"] = lambda r: (ad.div, [_t(r, 2, 3), _t(r, 2, 3, lo=0.5, hi=2.0)])
    c["absdiff"] = lambda r: (lambda a, b: ad.absdiff(a, b), [_away_from_zero(r, 2, 3), Tensor(np.zeros((2, 3)), requires_grad=True)])
    c["exp"] = lambda r: (ad.exp, [_t(r, 2, 3)])
    c["log"] = lambda r: (ad.log, [_t(r, 2, 3, lo=0.5, hi=2.0)])
    c["sqrt"] = lambda r: (ad.sqrt, [_t(r, 2, 3, lo=0.5, hi=2.0)])
    c["relu"] = lambda r: (ad.relu, [_away_from_zero(r, 2, 3)])
    c["sigmoid"] = lambda r: (ad.sigmoid, [_t(r, 2, 3)])
    c["gelu"] = lambda r: (ad.gelu, [_t(r, 2, 3)])
    c["clamp_min"] = lambda r: (lambda x: ad.clamp_min(x, 0.0), [_away_from_zero(r, 2, 3)])
    c["reshape"] = lambda r: (lambda x: ad.reshape(x, (3, 4)), [_t(r, 2, 6)])
    c["transpose"] = lambda r: (lambda x: ad.transpose(x, (2, 0, 1)), [_t(r, 2, 3, 4)])
    c["concat"] = lambda r: (lambda a, b: ad.concat([a, b], axis=1), [_t(r, 2, 2, 3), _t(r, 2, 1, 3)])
    c["reduce_sum"] = lambda r: (lambda x: ad.reduce(x, (0, 2), "sum"), [_t(r, 2, 3, 4)])
    c["reduce_mean"] = lambda r: (lambda x: ad.reduce(x, 1, "mean", keepdims=True), [_t(r, 2, 3, 4)])
    c["l2norm"] = lambda r: (lambda x: ad.l2norm(x, (1, 2)), [_t(r, 2, 3, 4)])
    c["softmax"] = lambda r: (lambda x: ad.softmax(x, -1), [_t(r, 2, 3, 4)])
    c["log_softmax"] = lambda r: (lambda x: ad.log_softmax(x, 1), [_t(r, 2, 3, 4)])
    c["layernorm"] = lambda r: (ad.layernorm_channels, [_t(r, 2, 3, 2, 2), _t(r, 3), _t(r, 3)])
    c["matmul"] = lambda r: (ad.matmul, [_t(r, 2, 3, 4), _t(r, 2, 4, 2)])
    c["channel_linear"] = lambda r: (ad.channel_linear, [_t(r, 2, 3, 2, 2), _t(r, 3, 4), _t(r, 4)])
    c["conv2d"] = lambda r: (lambda x, w, b: ad.conv2d(x, w, b, 1, 1), [_t(r, 1, 2, 4, 4), _t(r, 3, 2, 3, 3), _t(r, 3)])
    c["conv2d_stride2"] = lambda r: (lambda x, w, b: ad.conv2d(x, w, b, 2, 1), [_t(r, 1, 2, 4, 4), _t(r, 3, 2, 3, 3), _t(r, 3)])
    c["conv2d_depthwise"] = lambda r: (lambda x, w, b: ad.conv2d(x, w, b, 1, 1, groups=3), [_t(r, 2, 3, 4, 4), _t(r, 3, 1, 3, 3), _t(r, 3)])
    c["adaptive_avg_pool"] = lambda r: (lambda x: ad.adaptive_avg_pool(x, 2, 3), [_t(r, 1, 2, 5, 7)])
    c["bilinear_upsample"] = lambda r: (lambda x: ad.bilinear_upsample(x, 5, 7), [_t(r, 1, 2, 2, 3)])
    return c


_C, _CT, _HEADS = 4, 2, 2


def _rrl(r):
    m = RGBRGBLocal(_C)
    params = _module_params(m, r)
    return (lambda x, *_: m(x)), [_t(r, 2, _C, 3, 3)] + params


def _rtg(r):
    m = RGBTGlobal(_C, _CT, _HEADS, pool_size=2)
    params = _module_params(m, r)
    return (lambda x, y, *_: m(x, y)), [_t(r, 1, _C, 3, 3), _t(r, 1, _CT, 3, 3)] + params


def _rtg_pooled_kv(r):
    m = RGBTGlobal(_C, _CT, _HEADS, pool_size=2, orientation="pooled_kv")
    params = _module_params(m, r)
    return (lambda x, y, *_: m(x, y)), [_t(r, 1, _C, 3, 3), _t(r, 1, _CT, 3, 3)] + params


def _rtl(r):
    m = RGBTLocal(_C, _CT, se_reduction=2)
    params = _module_params(m, r)
    return (lambda x, y, *_: m(x, y)), [_t(r, 2, _C, 3, 3), _t(r, 2, _CT, 3, 3)] + params


def _block(r):
    cfg = ModelConfig(rgb_channels=(4, 8, 16, 32), heads=(2, 2, 2, 2), pool_size=2, se_reduction=2)
    m = EncoderBlock(_C, _CT, _HEADS, cfg)
    params = _module_params(m, r)
    for name, p in m.named_parameters():
        if name.endswith("gamma"):
            p.data = 1.0 + 0.2 * r.standard_normal(p.shape)

    def f(x, y, *_):
        out_r, out_t = m(x, y)
        return ad.concat([out_r, out_t], axis=1)

    return f, [_t(r, 1, _C, 3, 3), _t(r, 1, _CT, 3, 3)] + params


def _decoder(r):
    chans = (2, 3, 4, 5)
    m = MLPDecoder(chans, 3, 3)
    params = _module_params(m, r)
    sizes = (4, 2, 1, 1)
    maps = [_t(r, 1, c, s, s) for c, s in zip(chans, sizes)]
    return (lambda a, b, c, d, *_: m(EncoderOutput([a, b, c, d], []))), maps + params


def _loss(r):
    logits = _t(r, 2, 3, 4, 4)
    gt = r.integers(0, 3, (2, 4, 4))
    gt[r.random(gt.shape) < 0.15] = IGNORE
    gt[0, 0, 0] = 0
    weights = r.uniform(0.5, 2.0, 3)
    return (lambda z: total_loss(SegBatch(z, gt, weights))), [logits]


def _module_cases() -> dict[str, Callable]:
    return {
        "rgb_rgb_local": _rrl,
        "rgbt_global": _rtg,
        "rgbt_global_pooled_kv": _rtg_pooled_kv,
        "rgbt_local": _rtl,
        "encoder_block": _block,
        "mlp_decoder": _decoder,
        "total_loss": _loss,
    }


def all_cases() -> dict[str, Callable]:
    return {**_op_cases(), **_module_cases()}


def run_case(name: str, seed: int, tol: float = 1e-4, max_coords: int = 12) -> CaseResult:
    rng = np.random.default_rng([seed, sum(map(ord, name))])
    f, inputs = all_cases()[name](rng)
    rep = gradcheck(f, inputs, h=1e-5, tol=tol, seed=seed, max_coords=max_coords)
    return CaseResult(name, seed, rep.max_rel_err, rep.passed, rep.n_checked)


def run_suite(seeds=range(5), names=None, tol: float = 1e-4, max_coords: int = 12, log=None) -> list[CaseResult]:
    names = list(all_cases()) if names is None else list(names)
    results = []
    for name in names:
        t0 = time.perf_counter()
        per = [run_case(name, s, tol, max_coords) for s in seeds]
        results.extend(per)
        if log:
            worst = max(p.max_rel_err for p in per)
            ok = all(p.passed for p in per)
            log(f"{'PASS' if ok else 'FAIL'} {name:24s} max_rel_err={worst:.2e} "
                f"seeds={len(per)} ({time.perf_counter() - t0:.2f}s)")
    return results
