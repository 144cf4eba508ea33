"""Closed-form parameter and FLOP accounting for the segmentation model.

FLOP convention (embedded in every report): one multiply-accumulate counts as
2 FLOPs and every bias add as 1; elementwise ops and activations cost 1 per
output element; softmax 4, layer norm 8 and bilinear interpolation 8 per
output element; average pooling 1 per input element. Concatenation, reshape
and transpose are free. Counts are per image (batch size 1).

Row kinds tell how a row's FLOPs respond to the input size:
``spatial`` rows are proportional to H*W; ``token`` rows to the number of
pooled attention tokens; ``attention`` rows to pooled tokens x full tokens;
``resample`` rows exist only when pooled maps must be upsampled; ``global``
rows do not depend on H and W.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field

from tuni.encoder import VARIANTS, ModelConfig, build_variant
from tuni.errors import ConfigError, ContractError

CONVENTION = (
    "MAC=2 FLOPs, bias add=1; elementwise/activation=1, softmax=4, layernorm=8, "
    "bilinear=8 per output element; avgpool=1 per input element; concat/reshape free; batch 1"
)

REFERENCE_PARAMS = 10.63e6
REFERENCE_FLOPS = 17.16e9


@dataclass(frozen=True)
class CostRow:
    name: str
    kind: str
    params: int
    flops: int


@dataclass
class CostReport:
    rows: list[CostRow] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    input_hw: tuple[int, int] | None = None
    convention: str = CONVENTION

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def total_flops(self) -> int:
        return sum(r.flops for r in self.rows)

    def subtotal(self, prefix: str) -> tuple[int, int]:
        rows = [r for r in self.rows if r.name.startswith(prefix)]
        return sum(r.params for r in rows), sum(r.flops for r in rows)


class _Builder:
    def __init__(self, with_flops: bool):
        self.rows: list[CostRow] = []
        self.with_flops = with_flops

    def add(self, name, kind, params, flops):
        self.rows.append(CostRow(name, kind, int(params), int(flops) if self.with_flops else 0))

    def linear(self, name, cin, cout, positions, kind="spatial"):
        self.add(name, kind, cin * cout + cout, (2 * cin * cout + cout) * positions)

    def conv(self, name, cin, cout, k, out_positions):
        self.add(name, "spatial", cin * cout * k * k + cout, (2 * cin * k * k * cout + cout) * out_positions)

    def dwconv(self, name, c, k, positions):
        self.add(name, "spatial", c * k * k + c, (2 * k * k * c + c) * positions)

    def norm(self, name, c, positions):
        self.add(name, "spatial", 2 * c, 8 * c * positions)

    def elementwise(self, name, elements, kind="spatial"):
        self.add(name, kind, 0, elements)


def _stem(b: _Builder, name: str, cin: int, cout: int, H: int, W: int) -> None:
    mid = max(1, cout // 2)
    p1, p2 = (H // 2) * (W // 2), (H // 4) * (W // 4)
    b.conv(f"{name}.conv1", cin, mid, 3, p1)
    b.norm(f"{name}.norm1", mid, p1)
    b.elementwise(f"{name}.gelu1", mid * p1)
    b.conv(f"{name}.conv2", mid, cout, 3, p2)
    b.norm(f"{name}.norm2", cout, p2)
    b.elementwise(f"{name}.gelu2", cout * p2)


def _rrl(b, name, C, P):
    b.linear(f"{name}.gate", C, C, P)
    b.linear(f"{name}.value", C, C, P)
    b.dwconv(f"{name}.dwconv", C, 3, P)
    b.elementwise(f"{name}.product", C * P)


def _rtg(b, name, C, Ct, heads, h, w, cfg: ModelConfig):
    P = h * w
    ph, pw = min(cfg.pool_size, h), min(cfg.pool_size, w)
    Pq = ph * pw
    if cfg.attn_orientation == "pooled_query":
        b.linear(f"{name}.key", C, C, P)
        b.linear(f"{name}.value", C, C, P)
        b.elementwise(f"{name}.pool", (C + Ct) * P)
        b.linear(f"{name}.query", C + Ct, C, Pq, kind="token")
    else:
        b.elementwise(f"{name}.pool", C * P)
        b.linear(f"{name}.key", C, C, Pq, kind="token")
        b.linear(f"{name}.value", C, C, Pq, kind="token")
        b.linear(f"{name}.query", C + Ct, C, P)
    b.add(f"{name}.scores", "attention", 0, 2 * Pq * P * C + heads * Pq * P)
    b.add(f"{name}.softmax", "attention", 0, 4 * heads * Pq * P)
    b.add(f"{name}.context", "attention", 0, 2 * Pq * P * C)
    if cfg.attn_orientation == "pooled_query" and Pq != P:
        b.add(f"{name}.upsample", "resample", 0, 8 * C * P)
    b.linear(f"{name}.merge", C, C, P)


def _rtl(b, name, C, Ct, P, r):
    Ch = C // 2
    b.linear(f"{name}.proj_r", C, Ch, P)
    b.linear(f"{name}.proj_t", Ct, Ch, P)
    b.elementwise(f"{name}.consistent", Ch * P)
    b.elementwise(f"{name}.distinct", Ch * P)
    b.dwconv(f"{name}.dw_c", Ch, 3, P)
    b.dwconv(f"{name}.dw_d", Ch, 3, P)
    # channel mean (C*P adds + P divides), dot products and both norms (2 per element each)
    b.elementwise(f"{name}.cosine", C * P + P + 2 * C * P + 2 * C * P + 2 * P)
    b.elementwise(f"{name}.cosine_norm", C + 1 + 2 * C, kind="global")
    hid = max(1, C // r)
    b.add(f"{name}.se", "global", C * hid + hid + hid * C + C, (2 * C * hid + hid) + hid + (2 * hid * C + C) + C)
    b.elementwise(f"{name}.reweight", C * P)
    b.linear(f"{name}.out", C, C, P)


def _dfl(b, name, C, Ct, P):
    Ch = C // 2
    b.linear(f"{name}.proj_r", C, Ch, P)
    b.linear(f"{name}.proj_t", Ct, Ch, P)
    b.elementwise(f"{name}.product", Ch * P)
    b.linear(f"{name}.out", Ch, C, P)


def _block(b, name, C, Ct, heads, h, w, cfg: ModelConfig):
    P = h * w
    b.norm(f"{name}.norm_r", C, P)
    b.norm(f"{name}.norm_t", Ct, P)
    mods = cfg.modules_in_block()
    for m in mods:
        if m == "rrl":
            _rrl(b, f"{name}.rrl", C, P)
        elif m == "rtg":
            _rtg(b, f"{name}.rtg", C, Ct, heads, h, w, cfg)
        elif m == "rtl":
            _rtl(b, f"{name}.rtl", C, Ct, P, cfg.se_reduction)
        else:
            _dfl(b, f"{name}.dfl", C, Ct, P)
    width = len(mods) * C
    b.linear(f"{name}.fuse_r", width, C, P)
    b.linear(f"{name}.fuse_t", width, Ct, P)
    b.elementwise(f"{name}.residual", (C + Ct) * P)


def _build(config: ModelConfig, H: int, W: int, with_flops: bool) -> CostReport:
    b = _Builder(with_flops)
    cs, cts = config.rgb_channels, config.thermal_channels
    _stem(b, "encoder.stem_r", 3, cs[0], H, W)
    _stem(b, "encoder.stem_t", 1, cts[0], H, W)
    for i in range(4):
        s = 2 ** (i + 2)
        h, w = H // s, W // s
        for j in range(config.depths[i]):
            _block(b, f"encoder.stage{i + 1}.block{j + 1}", cs[i], cts[i], config.heads[i], h, w, config)
        if i < 3:
            po = (h // 2) * (w // 2)
            for tag, cin, cout in (("r", cs[i], cs[i + 1]), ("t", cts[i], cts[i + 1])):
                b.conv(f"encoder.stage{i + 1}.down_{tag}.conv", cin, cout, 3, po)
                b.norm(f"encoder.stage{i + 1}.down_{tag}.norm", cout, po)
    D, K = config.decoder_dim, config.num_classes
    P1 = (H // 4) * (W // 4)
    for i in range(4):
        s = 2 ** (i + 2)
        b.linear(f"decoder.proj{i + 1}", cs[i], D, (H // s) * (W // s))
        if i:
            b.add(f"decoder.upsample{i + 1}", "spatial", 0, 8 * D * P1)
    b.linear("decoder.fuse", 4 * D, D, P1)
    b.elementwise("decoder.relu", D * P1)
    b.linear("decoder.classify", D, K, P1)
    b.add("decoder.upsample_out", "spatial", 0, 8 * K * H * W)
    cfg = asdict(config)
    for k in ("depths", "rgb_channels", "heads"):
        cfg[k] = list(cfg[k])
    return CostReport(b.rows, cfg, (H, W) if with_flops else None)


def _check(config: ModelConfig) -> None:
    if not isinstance(config, ModelConfig):
        raise ConfigError("expected a ModelConfig")
    config.validate()


def count_params(config: ModelConfig) -> CostReport:
    """Per-layer parameter counts (FLOP column left at zero)."""
    _check(config)
    return _build(config, 32, 32, with_flops=False)


def count_flops(config: ModelConfig, input_h: int, input_w: int) -> CostReport:
    """Per-layer parameter and FLOP counts at an input resolution divisible by 32."""
    _check(config)
    if input_h < 32 or input_w < 32 or input_h % 32 or input_w % 32:
        raise ContractError(f"input {input_h}x{input_w} must be positive multiples of 32")
    return _build(config, input_h, input_w, with_flops=True)


def removed_module_cost(config: ModelConfig, module: str, input_h: int = 64, input_w: int = 64) -> tuple[int, int]:
    """(params, flops) that ``module`` (rrl, rtg, rtl or dfl) adds to a model,
    summed over every block: its own layers plus the fusion-projection columns
    that consume its output."""
    _check(config)
    b = _Builder(True)
    cs, cts = config.rgb_channels, config.thermal_channels
    for i in range(4):
        s = 2 ** (i + 2)
        h, w = input_h // s, input_w // s
        C, Ct, P = cs[i], cts[i], h * w
        for _ in range(config.depths[i]):
            if module == "rrl":
                _rrl(b, "m", C, P)
            elif module == "rtg":
                _rtg(b, "m", C, Ct, config.heads[i], h, w, config)
            elif module == "rtl":
                _rtl(b, "m", C, Ct, P, config.se_reduction)
            elif module == "dfl":
                _dfl(b, "m", C, Ct, P)
            else:
                raise ConfigError(f"unknown module {module!r}")
            # C more input columns in each of the two fusion projections
            b.add("m.fuse_share", "spatial", C * C + C * Ct, 2 * C * (C + Ct) * P)
    return sum(r.params for r in b.rows), sum(r.flops for r in b.rows)


def variant_delta(config: ModelConfig, variant: str, input_h: int = 64, input_w: int = 64) -> tuple[int, int]:
    """Closed-form (params, flops) of full minus ``variant``."""
    full = build_variant(config, "full")
    if variant == "full":
        return 0, 0
    if variant == "dformer_local":
        p1, f1 = removed_module_cost(full, "rtl", input_h, input_w)
        p2, f2 = removed_module_cost(full, "dfl", input_h, input_w)
        return p1 - p2, f1 - f2
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}")
    return removed_module_cost(full, variant[3:], input_h, input_w)


def emit_report(report: CostReport, fmt: str = "text") -> bytes:
    if fmt == "json":
        doc = {
            "convention": report.convention,
            "input_hw": list(report.input_hw) if report.input_hw else None,
            "config": report.config,
            "rows": [{"name": r.name, "kind": r.kind, "params": r.params, "flops": r.flops} for r in report.rows],
            "totals": {"params": report.total_params, "flops": report.total_flops},
        }
        return (json.dumps(doc, indent=2) + "\n").encode()
    if fmt != "text":
        raise ValueError(f"unknown report format {fmt!r}")
    width = max([len("layer")] + [len(r.name) for r in report.rows])
    lines = [f"{'layer':<{width}}  {'kind':<9}  {'params':>12}  {'flops':>16}"]
    lines += [f"{r.name:<{width}}  {r.kind:<9}  {r.params:>12,}  {r.flops:>16,}" for r in report.rows]
    lines.append(f"{'TOTAL':<{width}}  {'':<9}  {report.total_params:>12,}  {report.total_flops:>16,}")
    hw = f"{report.input_hw[0]}x{report.input_hw[1]}" if report.input_hw else "n/a"
    lines.append(f"# input {hw}; {report.convention}")
    return ("\n".join(lines) + "\n").encode()


@dataclass(frozen=True)
class Calibration:
    config: ModelConfig
    params: int
    flops: int
    input_hw: tuple[int, int]

    @property
    def param_gap(self) -> float:
        return self.params / REFERENCE_PARAMS - 1.0

    @property
    def flop_gap(self) -> float:
        return self.flops / REFERENCE_FLOPS - 1.0


def calibrate(input_hw=(480, 640), num_classes: int = 15, top: int = 5) -> list[Calibration]:
    """Grid-search stage depths and widths for the configs whose parameter
    count is closest to the reference total; FLOPs break ties."""
    H, W = input_hw
    found = []
    for l1, l2, l3, l4, base, dec in itertools.product(
        (1, 2, 3), (1, 2, 3), (2, 4, 6, 8, 10, 12), (1, 2, 3), (32, 48, 64, 80, 96), (128, 256, 512)
    ):
        cfg = ModelConfig(
            depths=(l1, l2, l3, l4),
            rgb_channels=tuple(base * m for m in (1, 2, 4, 8)),
            heads=(1, 2, 4, 8),
            num_classes=num_classes,
            decoder_dim=dec,
        )
        params = count_params(cfg).total_params
        found.append((abs(params - REFERENCE_PARAMS), cfg, params))
    found.sort(key=lambda t: t[0])
    best = []
    for _, cfg, params in found[: top * 4]:
        flops = count_flops(cfg, H, W).total_flops
        best.append(Calibration(cfg, params, flops, (H, W)))
    best.sort(key=lambda c: (round(abs(c.param_gap), 3), abs(c.flop_gap)))
    return best[:top]
