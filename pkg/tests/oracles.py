"""Straight-line numpy reimplementations used as independent oracles.

Nothing here calls into the autodiff engine; every formula is written out
with loops or plain numpy in float64.
"""
import math

import numpy as np

IGNORE = 255


def lin(x, w, b):
    """Channel linear on N x C x H x W or last-axis linear on N x C."""
    if x.ndim == 4:
        return np.einsum("nchw,co->nohw", x, w) + b[None, :, None, None]
    return x @ w + b


def dw(x, w, b):
    """Depthwise 3x3, stride 1, zero pad 1; ``w`` is C x 1 x 3 x 3."""
    N, C, H, W = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    out = np.zeros_like(x)
    for ky in range(3):
        for kx in range(3):
            out += xp[:, :, ky:ky + H, kx:kx + W] * w[None, :, 0, ky, kx, None, None]
    return out + b[None, :, None, None]


def layernorm(x, g, b, eps=1e-6):
    mu = x.mean(axis=1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * g[None, :, None, None] + b[None, :, None, None]


def pool(x, oh, ow):
    N, C, H, W = x.shape
    out = np.zeros((N, C, oh, ow))
    for i in range(oh):
        y0, y1 = (i * H) // oh, -((-(i + 1) * H) // oh)
        for j in range(ow):
            x0, x1 = (j * W) // ow, -((-(j + 1) * W) // ow)
            out[:, :, i, j] = x[:, :, y0:y1, x0:x1].mean(axis=(2, 3))
    return out


def upsample(x, oh, ow):
    h, w = x.shape[-2:]
    out = np.zeros(x.shape[:-2] + (oh, ow))
    for i in range(oh):
        sy = max((i + 0.5) * h / oh - 0.5, 0.0)
        y0 = min(int(math.floor(sy)), h - 1)
        y1, ly = min(y0 + 1, h - 1), sy - y0
        for j in range(ow):
            sx = max((j + 0.5) * w / ow - 0.5, 0.0)
            x0 = min(int(math.floor(sx)), w - 1)
            x1, lx = min(x0 + 1, w - 1), sx - x0
            out[..., i, j] = ((1 - ly) * (1 - lx) * x[..., y0, x0] + (1 - ly) * lx * x[..., y0, x1]
                              + ly * (1 - lx) * x[..., y1, x0] + ly * lx * x[..., y1, x1])
    return out


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def P(module):
    """Parameter dict of a module as float64 arrays."""
    return {n: t.data.astype(np.float64) for n, t in module.named_parameters()}


def rrl(p, f_r, pre=""):
    gate = lin(f_r, p[pre + "gate.weight"], p[pre + "gate.bias"])
    val = lin(f_r, p[pre + "value.weight"], p[pre + "value.bias"])
    return gate * dw(val, p[pre + "dwconv.weight"], p[pre + "dwconv.bias"])


def rtg_dense(p, f_r, f_t, heads, pool_size, pre=""):
    """Pooled thermal-aware queries attend over every full-resolution RGB token."""
    N, C, h, w = f_r.shape
    ph, pw = min(pool_size, h), min(pool_size, w)
    d = C // heads
    cat = np.concatenate([f_t, f_r], axis=1)
    q = lin(pool(cat, ph, pw), p[pre + "query.weight"], p[pre + "query.bias"])
    k = lin(f_r, p[pre + "key.weight"], p[pre + "key.bias"])
    v = lin(f_r, p[pre + "value.weight"], p[pre + "value.bias"])
    ctx = np.zeros((N, C, ph * pw))
    attn_rows = []
    for n in range(N):
        for hd in range(heads):
            sl = slice(hd * d, (hd + 1) * d)
            Q = q[n, sl].reshape(d, -1).T          # Lq x d
            K = k[n, sl].reshape(d, -1)            # d x Lk
            V = v[n, sl].reshape(d, -1).T          # Lk x d
            S = Q @ K / math.sqrt(d)
            S = np.exp(S - S.max(axis=1, keepdims=True))
            A = S / S.sum(axis=1, keepdims=True)
            attn_rows.append(A)
            ctx[n, sl] = (A @ V).T
    ctx = ctx.reshape(N, C, ph, pw)
    if (ph, pw) != (h, w):
        ctx = upsample(ctx, h, w)
    return lin(ctx, p[pre + "merge.weight"], p[pre + "merge.bias"]), attn_rows


def cosine(f_cd):
    """Per-channel cosine between each map and the channel-mean map, by explicit dot products."""
    N, C = f_cd.shape[:2]
    out = np.zeros((N, C))
    for n in range(N):
        a = f_cd[n].mean(axis=0).ravel()
        na = max(math.sqrt(float(a @ a)), 1e-8)
        for c in range(C):
            f = f_cd[n, c].ravel()
            out[n, c] = float(f @ a) / (max(math.sqrt(float(f @ f)), 1e-8) * na)
    return out


def rtl(p, f_r, f_t, pre=""):
    pr = lin(f_r, p[pre + "proj_r.weight"], p[pre + "proj_r.bias"])
    pt = lin(f_t, p[pre + "proj_t.weight"], p[pre + "proj_t.bias"])
    f_c, f_d = pr * pt, np.abs(pr - pt)
    f_cd = np.concatenate([dw(f_c, p[pre + "dw_c.weight"], p[pre + "dw_c.bias"]),
                           dw(f_d, p[pre + "dw_d.weight"], p[pre + "dw_d.bias"])], axis=1)
    w_cos = cosine(f_cd)
    hid = np.maximum(w_cos @ p[pre + "se.fc1_weight"] + p[pre + "se.fc1_bias"], 0)
    gate = sigmoid(hid @ p[pre + "se.fc2_weight"] + p[pre + "se.fc2_bias"])
    out = lin(f_cd * gate[:, :, None, None], p[pre + "out.weight"], p[pre + "out.bias"])
    return out, w_cos, gate


def block(p, f_r, f_t, heads, pool_size):
    xr = layernorm(f_r, p["norm_r.gamma"], p["norm_r.beta"])
    xt = layernorm(f_t, p["norm_t.gamma"], p["norm_t.beta"])
    parts = [rrl(p, xr, "rrl."), rtg_dense(p, xr, xt, heads, pool_size, "rtg.")[0], rtl(p, xr, xt, "rtl.")[0]]
    cat = np.concatenate(parts, axis=1)
    return (f_r + lin(cat, p["fuse_r.weight"], p["fuse_r.bias"]),
            f_t + lin(cat, p["fuse_t.weight"], p["fuse_t.bias"]))


def decoder(p, maps):
    h, w = maps[0].shape[-2:]
    ups = []
    for i, m in enumerate(maps):
        y = lin(m, p[f"proj{i + 1}.weight"], p[f"proj{i + 1}.bias"])
        ups.append(upsample(y, h, w) if y.shape[-2:] != (h, w) else y)
    fused = np.maximum(lin(np.concatenate(ups, axis=1), p["fuse.weight"], p["fuse.bias"]), 0)
    logits = lin(fused, p["classify.weight"], p["classify.bias"])
    return upsample(logits, 4 * h, 4 * w)


def weighted_ce(logits, gt, weights):
    N, K, H, W = logits.shape
    num = den = 0.0
    for n in range(N):
        for i in range(H):
            for j in range(W):
                c = int(gt[n, i, j])
                if c == IGNORE:
                    continue
                z = logits[n, :, i, j]
                m = z.max()
                lse = m + math.log(sum(math.exp(v - m) for v in z))
                num += weights[c] * (lse - z[c])
                den += weights[c]
    return num / den


def dice(logits, gt, eps=1.0):
    N, K, H, W = logits.shape
    inter, psum, gsum = np.zeros(K), np.zeros(K), np.zeros(K)
    for n in range(N):
        for i in range(H):
            for j in range(W):
                c = int(gt[n, i, j])
                if c == IGNORE:
                    continue
                z = logits[n, :, i, j]
                e = np.exp(z - z.max())
                pr = e / e.sum()
                psum += pr
                gsum[c] += 1
                inter[c] += pr[c]
    return 1.0 - np.mean((2 * inter + eps) / (psum + gsum + eps))
