import json

import numpy as np
import pytest

from tuni.cost import (
    CONVENTION,
    CostReport,
    CostRow,
    calibrate,
    count_flops,
    count_params,
    emit_report,
    removed_module_cost,
    variant_delta,
)
from tuni.encoder import VARIANTS, ModelConfig, build_variant
from tuni.errors import ConfigError, ContractError
from tuni.layers import LayerSpec, ParamRegistry
from tuni.model import SegmentationModel

TINY = ModelConfig(depths=(1, 1, 1, 1), rgb_channels=(8, 16, 32, 64), heads=(1, 2, 2, 4), decoder_dim=8)


def live_params(cfg):
    return ParamRegistry.from_module(SegmentationModel(cfg)).numel()


def random_config(rng):
    base = int(rng.choice([4, 8, 12, 16]))
    heads = tuple(int(h) for h in rng.choice([1, 2, 4], 4))
    return ModelConfig(
        depths=tuple(int(d) for d in rng.integers(1, 3, 4)),
        rgb_channels=(base, 2 * base, 4 * base, 8 * base),
        heads=heads,
        thermal_ratio=float(rng.choice([0.25, 0.5, 1.0])),
        pool_size=int(rng.integers(1, 8)),
        num_classes=int(rng.integers(2, 6)),
        decoder_dim=int(rng.choice([4, 8, 16])),
        se_reduction=int(rng.integers(1, 5)),
        variant=str(rng.choice(VARIANTS)),
        attn_orientation=str(rng.choice(["pooled_query", "pooled_kv"])),
    )


@pytest.mark.parametrize("variant", VARIANTS)
def test_variant_param_count_matches_live_model(variant):
    cfg = build_variant(TINY, variant)
    assert count_params(cfg).total_params == live_params(cfg)


def test_desk_config_counts():
    cfg = ModelConfig()
    assert count_params(cfg).total_params == live_params(cfg) == 3_321_796
    assert count_params(build_variant(cfg, "no_rtl")).total_params == 2_530_004


def test_random_configs_match_live_registry():
    rng = np.random.default_rng(7)
    for _ in range(50):
        cfg = random_config(rng)
        assert count_params(cfg).total_params == live_params(cfg), cfg


@pytest.mark.parametrize("cfg", [TINY, ModelConfig(), ModelConfig(attn_orientation="pooled_kv", pool_size=2)])
@pytest.mark.parametrize("variant", VARIANTS)
@pytest.mark.parametrize("hw", [(64, 64), (96, 128)])
def test_ablation_deltas_are_closed_form(cfg, variant, hw):
    full = count_flops(build_variant(cfg, "full"), *hw)
    var = count_flops(build_variant(cfg, variant), *hw)
    dp, df = variant_delta(cfg, variant, *hw)
    assert full.total_params - var.total_params == dp
    assert full.total_flops - var.total_flops == df


def test_removed_module_is_positive_and_unknown_rejected():
    for m in ("rrl", "rtg", "rtl", "dfl"):
        p, f = removed_module_cost(TINY, m)
        assert p > 0 and f > 0
    with pytest.raises(ConfigError):
        removed_module_cost(TINY, "nope")
    with pytest.raises(ConfigError):
        variant_delta(TINY, "no_everything")
    assert variant_delta(TINY, "full") == (0, 0)


def test_linear_layer_flops():
    # 4 -> 8 linear at one position: 2 * 4 * 8 MAC flops + 8 bias adds
    assert LayerSpec("linear", 4, 8).param_count() == 40
    rep = count_flops(TINY, 32, 32)
    row = next(r for r in rep.rows if r.name == "decoder.classify")
    assert row.params == 8 * 4 + 4
    assert row.flops == (2 * 8 * 4 + 4) * 8 * 8


def test_flops_scale_with_resolution():
    a, b = count_flops(ModelConfig(), 448, 448), count_flops(ModelConfig(), 896, 896)
    assert [r.name for r in a.rows] == [r.name for r in b.rows]
    for ra, rb in zip(a.rows, b.rows):
        assert ra.params == rb.params
        if ra.kind in ("token", "global"):
            assert rb.flops == ra.flops, ra.name      # pooled tokens and per-channel SE terms do not grow
        else:
            assert rb.flops == 4 * ra.flops, ra.name


def test_params_independent_of_resolution_and_flops_column():
    cfg = ModelConfig()
    assert count_params(cfg).total_flops == 0
    assert count_flops(cfg, 64, 64).total_params == count_flops(cfg, 256, 320).total_params


def test_input_contract():
    with pytest.raises(ContractError):
        count_flops(TINY, 48, 64)
    with pytest.raises(ConfigError):
        count_params("not a config")


def test_json_round_trip_and_determinism():
    rep = count_flops(TINY, 64, 96)
    raw = emit_report(rep, "json")
    assert raw == emit_report(count_flops(TINY, 64, 96), "json")
    doc = json.loads(raw)
    assert set(doc) == {"convention", "input_hw", "config", "rows", "totals"}
    assert doc["input_hw"] == [64, 96] and doc["convention"] == CONVENTION
    assert doc["totals"] == {"params": rep.total_params, "flops": rep.total_flops}
    assert sum(r["params"] for r in doc["rows"]) == doc["totals"]["params"]
    assert sum(r["flops"] for r in doc["rows"]) == doc["totals"]["flops"]
    back = CostReport([CostRow(**r) for r in doc["rows"]], doc["config"], tuple(doc["input_hw"]))
    assert back.rows == rep.rows
    assert ModelConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in doc["config"].items()}) == TINY


def test_text_and_empty_reports():
    text = emit_report(count_flops(TINY, 32, 32)).decode()
    assert text.splitlines()[0].startswith("layer") and "TOTAL" in text
    empty = CostReport()
    assert empty.total_params == 0 and empty.total_flops == 0
    doc = json.loads(emit_report(empty, "json"))
    assert doc["rows"] == [] and doc["totals"] == {"params": 0, "flops": 0} and doc["input_hw"] is None
    with pytest.raises(ValueError):
        emit_report(empty, "xml")


def test_subtotals_partition_the_total():
    rep = count_flops(ModelConfig(), 64, 64)
    parts = [rep.subtotal(p) for p in ("encoder.", "decoder.")]
    assert sum(p for p, _ in parts) == rep.total_params
    assert sum(f for _, f in parts) == rep.total_flops


def test_calibration_reports_gap():
    best = calibrate(top=3)
    assert len(best) == 3
    for c in best:
        assert c.params == count_params(c.config).total_params
        assert np.isfinite(c.param_gap) and np.isfinite(c.flop_gap)
    assert abs(best[0].param_gap) < 0.05
