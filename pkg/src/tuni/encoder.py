"""RGB-thermal encoder: stacked blocks that extract and fuse both modalities.

Each block runs three submodules on pre-normalized RGB (``f_r``) and thermal
(``f_t``) maps and adds a linear merge of their concatenated outputs back onto
both streams:

* RGB-RGB local:  gate(f_r) * dwconv(value(f_r))
* RGB-T global:   pooled cross-modal queries attending over RGB keys/values
* RGB-T local:    consistent (product) and distinct (|difference|) features,
                  reweighted per channel by cosine similarity with their
                  channel-mean map, then gated by a squeeze-excitation block.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from tuni import autodiff as ad
from tuni.autodiff import Tensor
from tuni.errors import ConfigError, ContractError, DimensionError
from tuni.layers import SE, DWConv, Downsample, LayerNorm, Linear, Module, Stem

VARIANTS = ("full", "no_rrl", "no_rtg", "no_rtl", "dformer_local")
ORIENTATIONS = ("pooled_query", "pooled_kv")
COS_EPS = 1e-8


@dataclass(frozen=True)
class ModelConfig:
    depths: tuple[int, ...] = (2, 2, 4, 2)
    rgb_channels: tuple[int, ...] = (32, 64, 128, 256)
    thermal_ratio: float = 0.5
    heads: tuple[int, ...] = (1, 2, 4, 8)
    pool_size: int = 7
    variant: str = "full"
    num_classes: int = 4
    decoder_dim: int = 64
    se_reduction: int = 4
    attn_orientation: str = "pooled_query"

    def __post_init__(self):
        for name in ("depths", "rgb_channels", "heads"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        self.validate()

    @property
    def thermal_channels(self) -> tuple[int, ...]:
        return tuple(max(1, int(round(c * self.thermal_ratio))) for c in self.rgb_channels)

    def validate(self) -> None:
        if not (len(self.depths) == len(self.rgb_channels) == len(self.heads) == 4):
            raise ConfigError("depths, rgb_channels and heads need exactly four stages")
        if min(self.depths) < 1:
            raise ConfigError(f"every stage needs at least one block, got {self.depths}")
        if any(b <= a for a, b in zip(self.rgb_channels, self.rgb_channels[1:])):
            raise ConfigError(f"channels must strictly increase, got {self.rgb_channels}")
        if any(c % 2 for c in self.rgb_channels):
            raise ConfigError("channel widths must be even (local fusion splits them in half)")
        if not 0 < self.thermal_ratio <= 1:
            raise ConfigError(f"thermal_ratio must be in (0, 1], got {self.thermal_ratio}")
        for c, h in zip(self.rgb_channels, self.heads):
            if h < 1 or c % h:
                raise ConfigError(f"{h} heads do not divide {c} channels")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.attn_orientation not in ORIENTATIONS:
            raise ConfigError(f"unknown attention orientation {self.attn_orientation!r}")
        if self.pool_size < 1 or self.num_classes < 2 or self.decoder_dim < 1 or self.se_reduction < 1:
            raise ConfigError("pool_size, decoder_dim, se_reduction must be >= 1 and num_classes >= 2")

    def modules_in_block(self) -> tuple[str, ...]:
        """Names of the fusion submodules a block runs, in concat order."""
        return {
            "full": ("rrl", "rtg", "rtl"),
            "no_rrl": ("rtg", "rtl"),
            "no_rtg": ("rrl", "rtl"),
            "no_rtl": ("rrl", "rtg"),
            "dformer_local": ("rrl", "rtg", "dfl"),
        }[self.variant]


def build_variant(config: ModelConfig, variant: str) -> ModelConfig:
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    return config if variant == config.variant else replace(config, variant=variant)


@dataclass
class BlockIntermediates:
    l_rr: Tensor | None = None
    q_t: Tensor | None = None
    k_r: Tensor | None = None
    v_r: Tensor | None = None
    attn: Tensor | None = None
    g_rt: Tensor | None = None
    f_c: Tensor | None = None
    f_d: Tensor | None = None
    f_cd: Tensor | None = None
    w_cos: Tensor | None = None
    se_gate: Tensor | None = None
    l_rt: Tensor | None = None


@dataclass
class EncoderOutput:
    rgb: list[Tensor] = field(default_factory=list)
    thermal: list[Tensor] = field(default_factory=list)


class RGBRGBLocal(Module):
    def __init__(self, channels: int):
        super().__init__()
        self.gate = Linear(channels, channels)
        self.value = Linear(channels, channels)
        self.dwconv = DWConv(channels, 3)

    def __call__(self, f_r: Tensor) -> Tensor:
        return ad.mul(self.gate(f_r), self.dwconv(self.value(f_r)))


def _heads_first(x: Tensor, heads: int) -> Tensor:
    """(N, C, h, w) -> (N, heads, C/heads, h*w)."""
    N, C, h, w = x.shape
    return ad.reshape(x, (N, heads, C // heads, h * w))


class RGBTGlobal(Module):
    def __init__(self, channels: int, thermal_channels: int, heads: int, pool_size: int = 7,
                 orientation: str = "pooled_query"):
        super().__init__()
        self.heads = heads
        self.pool_size = pool_size
        self.orientation = orientation
        self.key = Linear(channels, channels)
        self.value = Linear(channels, channels)
        self.query = Linear(thermal_channels + channels, channels)
        self.merge = Linear(channels, channels)

    def pooled_hw(self, h: int, w: int) -> tuple[int, int]:
        return min(self.pool_size, h), min(self.pool_size, w)

    def __call__(self, f_r: Tensor, f_t: Tensor, inter: BlockIntermediates | None = None) -> Tensor:
        if f_r.shape[2:] != f_t.shape[2:]:
            raise DimensionError("RGB and thermal maps are not spatially aligned")
        N, C, h, w = f_r.shape
        ph, pw = self.pooled_hw(h, w)
        heads = self.heads
        d = C // heads
        cat = ad.concat([f_t, f_r], axis=1)
        if self.orientation == "pooled_query":
            k = self.key(f_r)
            v = self.value(f_r)
            q = self.query(ad.adaptive_avg_pool(cat, ph, pw))
            out_h, out_w = ph, pw
        else:
            pooled = ad.adaptive_avg_pool(f_r, ph, pw)
            k = self.key(pooled)
            v = self.value(pooled)
            q = self.query(cat)
            out_h, out_w = h, w
        qh = ad.transpose(_heads_first(q, heads), (0, 1, 3, 2))          # N, heads, Lq, d
        kh = _heads_first(k, heads)                                     # N, heads, d, Lk
        vh = ad.transpose(_heads_first(v, heads), (0, 1, 3, 2))          # N, heads, Lk, d
        scores = ad.mul(ad.matmul(qh, kh), 1.0 / math.sqrt(d))
        attn = ad.softmax(scores, axis=-1)
        ctx = ad.matmul(attn, vh)                                       # N, heads, Lq, d
        ctx = ad.reshape(ad.transpose(ctx, (0, 1, 3, 2)), (N, C, out_h, out_w))
        if (out_h, out_w) != (h, w):
            ctx = ad.bilinear_upsample(ctx, h, w)
        g_rt = self.merge(ctx)
        if inter is not None:
            inter.q_t, inter.k_r, inter.v_r, inter.attn, inter.g_rt = q, k, v, attn, g_rt
        return g_rt


def cosine_weights(f_cd: Tensor, eps: float = COS_EPS) -> Tensor:
    """Per-channel cosine similarity between each map of ``f_cd`` and the channel mean.

    Returns an (N, C) tensor with entries in [-1, 1].
    """
    N = f_cd.shape[0]
    avg = ad.reduce(f_cd, 1, "mean", keepdims=True)                     # N, 1, h, w
    dot = ad.reduce(ad.mul(f_cd, avg), (2, 3), "sum")                    # N, C
    n_f = ad.clamp_min(ad.l2norm(f_cd, (2, 3)), eps)                     # N, C
    n_a = ad.clamp_min(ad.l2norm(avg, (1, 2, 3)), eps)                   # N
    return ad.div(dot, ad.mul(n_f, ad.reshape(n_a, (N, 1))))


class RGBTLocal(Module):
    def __init__(self, channels: int, thermal_channels: int, se_reduction: int = 4):
        super().__init__()
        hidden = channels // 2
        self.proj_r = Linear(channels, hidden)
        self.proj_t = Linear(thermal_channels, hidden)
        self.dw_c = DWConv(hidden, 3)
        self.dw_d = DWConv(hidden, 3)
        self.se = SE(2 * hidden, se_reduction)
        self.out = Linear(2 * hidden, channels)

    def __call__(self, f_r: Tensor, f_t: Tensor, inter: BlockIntermediates | None = None) -> Tensor:
        pr = self.proj_r(f_r)
        pt = self.proj_t(f_t)
        f_c = ad.mul(pr, pt)
        f_d = ad.absdiff(pr, pt)
        f_cd = ad.concat([self.dw_c(f_c), self.dw_d(f_d)], axis=1)
        w_cos = cosine_weights(f_cd)
        gate = self.se(w_cos)
        N, C = gate.shape
        l_rt = self.out(ad.mul(f_cd, ad.reshape(gate, (N, C, 1, 1))))
        if inter is not None:
            inter.f_c, inter.f_d, inter.f_cd = f_c, f_d, f_cd
            inter.w_cos, inter.se_gate, inter.l_rt = w_cos, gate, l_rt
        return l_rt


class DFormerLocal(Module):
    """Plain product fusion used by the ``dformer_local`` ablation."""

    def __init__(self, channels: int, thermal_channels: int):
        super().__init__()
        hidden = channels // 2
        self.proj_r = Linear(channels, hidden)
        self.proj_t = Linear(thermal_channels, hidden)
        self.out = Linear(hidden, channels)

    def __call__(self, f_r: Tensor, f_t: Tensor, inter: BlockIntermediates | None = None) -> Tensor:
        l_rt = self.out(ad.mul(self.proj_r(f_r), self.proj_t(f_t)))
        if inter is not None:
            inter.l_rt = l_rt
        return l_rt


class EncoderBlock(Module):
    def __init__(self, channels: int, thermal_channels: int, heads: int, config: ModelConfig):
        super().__init__()
        self.channels = channels
        self.thermal_channels = thermal_channels
        self.active = config.modules_in_block()
        self.norm_r = LayerNorm(channels)
        self.norm_t = LayerNorm(thermal_channels)
        if "rrl" in self.active:
            self.rrl = RGBRGBLocal(channels)
        if "rtg" in self.active:
            self.rtg = RGBTGlobal(channels, thermal_channels, heads, config.pool_size, config.attn_orientation)
        if "rtl" in self.active:
            self.rtl = RGBTLocal(channels, thermal_channels, config.se_reduction)
        if "dfl" in self.active:
            self.dfl = DFormerLocal(channels, thermal_channels)
        width = len(self.active) * channels
        self.fuse_r = Linear(width, channels)
        self.fuse_t = Linear(width, thermal_channels)

    def __call__(self, f_r: Tensor, f_t: Tensor, trace: list | None = None) -> tuple[Tensor, Tensor]:
        if f_r.shape[1] != self.channels or f_t.shape[1] != self.thermal_channels:
            raise DimensionError(
                f"block expects {self.channels}/{self.thermal_channels} channels, "
                f"got {f_r.shape[1]}/{f_t.shape[1]}"
            )
        inter = BlockIntermediates() if trace is not None else None
        xr = self.norm_r(f_r)
        xt = self.norm_t(f_t)
        parts = []
        for name in self.active:
            if name == "rrl":
                out = self.rrl(xr)
                if inter is not None:
                    inter.l_rr = out
            else:
                out = getattr(self, name)(xr, xt, inter)
            parts.append(out)
        cat = ad.concat(parts, axis=1) if len(parts) > 1 else parts[0]
        if trace is not None:
            trace.append(inter)
        return ad.add(f_r, self.fuse_r(cat)), ad.add(f_t, self.fuse_t(cat))


def encoder_block(f_r: Tensor, f_t: Tensor, block: EncoderBlock, trace: list | None = None):
    return block(f_r, f_t, trace)


class Stage(Module):
    def __init__(self, index: int, config: ModelConfig):
        super().__init__()
        i = index
        c, ct = config.rgb_channels[i], config.thermal_channels[i]
        self.blocks = []
        for j in range(config.depths[i]):
            self.blocks.append(self.add_module(f"block{j + 1}", EncoderBlock(c, ct, config.heads[i], config)))
        if i < 3:
            self.down_r = Downsample(c, config.rgb_channels[i + 1])
            self.down_t = Downsample(ct, config.thermal_channels[i + 1])


class Encoder(Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.stem_r = Stem(3, config.rgb_channels[0])
        self.stem_t = Stem(1, config.thermal_channels[0])
        self.stages = [self.add_module(f"stage{i + 1}", Stage(i, config)) for i in range(4)]

    def __call__(self, rgb: Tensor, thermal: Tensor, trace: list | None = None) -> EncoderOutput:
        H, W = rgb.shape[-2:]
        if H % 32 or W % 32:
            raise ContractError(f"input {H}x{W} must be divisible by 32 (pad it first)")
        if rgb.shape[1] != 3 or thermal.shape[1] != 1 or thermal.shape[-2:] != (H, W):
            raise DimensionError(f"expected RGB N x 3 x H x W and thermal N x 1 x H x W, got {rgb.shape}, {thermal.shape}")
        f_r, f_t = self.stem_r(rgb), self.stem_t(thermal)
        out = EncoderOutput()
        for i, stage in enumerate(self.stages):
            for block in stage.blocks:
                f_r, f_t = block(f_r, f_t, trace)
            out.rgb.append(f_r)
            out.thermal.append(f_t)
            if i < 3:
                f_r, f_t = stage.down_r(f_r), stage.down_t(f_t)
        return out


def encoder_forward(rgb: Tensor, thermal: Tensor, encoder: Encoder, trace: list | None = None) -> EncoderOutput:
    return encoder(rgb, thermal, trace)
