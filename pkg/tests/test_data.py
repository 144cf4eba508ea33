import numpy as np
import pytest

from tuni.data import (
    IGNORE,
    augment_batch,
    box_blur,
    emissivity,
    gen_synthetic,
    luminance,
    palette,
    pseudo_thermal,
)
from tuni.errors import ContractError
from tuni.head import class_weights


def test_generation_is_deterministic_per_seed():
    a, b = gen_synthetic(3, 4), gen_synthetic(3, 4)
    for f in ("rgb", "thermal", "labels", "low_light"):
        assert np.array_equal(getattr(a, f), getattr(b, f))
    c = gen_synthetic(4, 4)
    assert not np.array_equal(a.rgb, c.rgb)


def test_samples_independent_of_batch_size():
    big, small = gen_synthetic(11, 6), gen_synthetic(11, 3)
    assert np.array_equal(big.rgb[:3], small.rgb) and np.array_equal(big.labels[:3], small.labels)


def test_shapes_ranges_and_dtypes():
    d = gen_synthetic(0, 4, 64, 96)
    assert d.rgb.shape == (4, 64, 96, 3) and d.thermal.shape == (4, 64, 96, 1) and d.labels.shape == (4, 64, 96)
    assert d.rgb.dtype == np.float32 and d.thermal.dtype == np.float32 and d.labels.dtype == np.uint8
    for arr in (d.rgb, d.thermal):
        assert arr.min() >= 0 and arr.max() <= 1
    assert d.labels.max() < 4


def test_every_class_appears():
    d = gen_synthetic(1, 64)
    assert set(np.unique(d.labels)) == {0, 1, 2, 3}
    h = d.label_histogram()
    assert (h > 0).all() and (class_weights(h) > 0).all()


def test_large_histogram_gives_positive_weights():
    h = gen_synthetic(2, 256, 32, 32).label_histogram()
    w = class_weights(h)
    assert (h > 0).all() and np.isfinite(w).all() and (w > 0).all()
    assert np.argmax(w) == np.argmin(h)


def test_low_light_fraction_extremes():
    assert gen_synthetic(0, 6, low_light_frac=1.0).low_light.all()
    assert not gen_synthetic(0, 6, low_light_frac=0.0).low_light.any()
    dark, lit = gen_synthetic(0, 4, low_light_frac=1.0), gen_synthetic(0, 4, low_light_frac=0.0)
    # thermal is rendered before the lighting change, so it does not depend on it
    assert np.array_equal(dark.thermal, lit.thermal)
    assert dark.rgb.std() < lit.rgb.std()


def test_cls_mode_labels_are_majority_class():
    d = gen_synthetic(5, 12, mode="cls")
    assert d.labels.shape == (12,) and d.labels.dtype == np.int64
    assert set(d.labels.tolist()) <= {0, 1, 2, 3}
    assert d.label_histogram().sum() == 12


@pytest.mark.parametrize("kw", [dict(h=48), dict(w=0), dict(mode="det"), dict(num_classes=1)])
def test_generator_contracts(kw):
    args = dict(seed=0, n=1) | kw
    with pytest.raises(ContractError):
        gen_synthetic(**args)


def test_palette_and_emissivity_are_distinct():
    cols = np.stack([palette(i) for i in range(8)])
    assert len({tuple(np.round(c, 6)) for c in cols}) == 8
    em = [emissivity(i) for i in range(8)]
    assert len(set(em)) == 8 and all(0 <= e <= 1 for e in em)


def test_box_blur_matches_loop(rng):
    img = rng.random((6, 7))
    got = box_blur(img, 5)
    pad = np.pad(img, 2, mode="edge")
    ref = np.array([[pad[i:i + 5, j:j + 5].mean() for j in range(7)] for i in range(6)])
    np.testing.assert_allclose(got, ref, rtol=1e-12)


def test_pseudo_thermal_constant_scene():
    rgb = np.full((8, 8, 3), 0.5)
    lab = np.full((8, 8), 2)
    th = pseudo_thermal(rgb, lab, seed=0, noise=0.0)
    expect = np.clip(emissivity(2) + 0.2 * 0.5, 0, 1)
    np.testing.assert_allclose(th[..., 0], expect, rtol=1e-6)
    assert th.shape == (8, 8, 1)


def test_pseudo_thermal_loop_oracle_and_range(rng):
    rgb = rng.random((9, 10, 3))
    lab = rng.integers(0, 4, (9, 10))
    lab[0, 0] = IGNORE
    got = pseudo_thermal(rgb, lab, seed=0, noise=0.0)[..., 0]
    heat = np.zeros((9, 10))
    for i in range(9):
        for j in range(10):
            c = 0 if lab[i, j] == IGNORE else lab[i, j]
            heat[i, j] = emissivity(c) + 0.2 * (0.299 * rgb[i, j, 0] + 0.587 * rgb[i, j, 1] + 0.114 * rgb[i, j, 2])
    np.testing.assert_allclose(got, np.clip(box_blur(heat, 5), 0, 1), rtol=1e-6)
    noisy = pseudo_thermal(rgb, lab, seed=0, noise=5.0)
    assert noisy.min() >= 0 and noisy.max() <= 1
    with pytest.raises(ContractError):
        pseudo_thermal(rgb, lab[:, :5], seed=0)
    np.testing.assert_allclose(luminance(np.ones((1, 1, 3))), 1.0)


def test_augment_keeps_alignment(rng):
    d = gen_synthetic(0, 3)
    rgb, th, lab = d.batch(np.arange(3))
    r, t, l = augment_batch(np.random.default_rng(0), rgb.data, th.data, lab)
    assert r.shape == rgb.shape and t.shape == th.shape and l.shape == lab.shape
    assert set(np.unique(l)) <= set(np.unique(lab)) | {IGNORE}
    # padded rim: IGNORE labels coincide with zero images
    ign = l == IGNORE
    assert (r.transpose(0, 2, 3, 1)[ign] == 0).all() and (t[:, 0][ign] == 0).all()
    r2, _, l2 = augment_batch(np.random.default_rng(0), rgb.data, th.data, lab)
    assert np.array_equal(r, r2) and np.array_equal(l, l2)
    assert np.array_equal(lab, d.labels[:3])                 # inputs untouched


def test_batch_layout_and_zero_thermal():
    d = gen_synthetic(0, 2)
    rgb, th, lab = d.batch([1, 0], zero_thermal=True)
    assert rgb.shape == (2, 3, 64, 64) and th.shape == (2, 1, 64, 64)
    assert not th.data.any()
    np.testing.assert_array_equal(rgb.data[0], d.rgb[1].transpose(2, 0, 1))
    assert np.array_equal(lab, d.labels[[1, 0]])
