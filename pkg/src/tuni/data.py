"""Seeded procedural RGB-thermal scenes and a label-aware pseudo-thermal transform.

Every sample draws from its own counter-based seed (``SeedSequence(seed,
spawn_key=(i,))``), so any subset of a dataset can be generated independently
and in any order with identical results.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from tuni.autodiff import Tensor
from tuni.errors import ContractError
from tuni.head import IGNORE

LOW_LIGHT_CONTRAST = 0.15
LOW_LIGHT_NOISE = 0.2
THERMAL_NOISE = 0.02
_GOLDEN = 0.6180339887498949


def palette(index: int) -> np.ndarray:
    """RGB base colour for palette index (0 is the background tint)."""
    if index == 0:
        return np.array([0.5, 0.5, 0.5])
    hue = (index * _GOLDEN) % 1.0
    k = (np.array([0.0, 1.0 / 3, 2.0 / 3]) + hue) % 1.0
    return 0.5 + 0.4 * np.cos(2 * np.pi * k)


def emissivity(index: int) -> float:
    """Thermal signature of palette index; background is coolest."""
    if index == 0:
        return 0.15
    return 0.3 + 0.5 * ((index * _GOLDEN) % 1.0)


def luminance(rgb: np.ndarray) -> np.ndarray:
    return rgb[..., 0] * 0.299 + rgb[..., 1] * 0.587 + rgb[..., 2] * 0.114


def box_blur(img: np.ndarray, size: int = 5) -> np.ndarray:
    """Mean over a size x size window with edge replication."""
    r = size // 2
    padded = np.pad(img, r, mode="edge")
    return sliding_window_view(padded, (size, size)).mean(axis=(-1, -2))


def pseudo_thermal(rgb: np.ndarray, labels: np.ndarray, seed: int, noise: float = THERMAL_NOISE,
                   emissivity_of=emissivity) -> np.ndarray:
    """Per-class emissivity + 0.2 * luminance, 5x5 box blur, Gaussian noise, clamp to [0, 1].

    ``labels`` holds palette indices; IGNORE pixels use the background value.
    Returns an H x W x 1 map.
    """
    if rgb.shape[:2] != labels.shape:
        raise ContractError(f"rgb {rgb.shape} and labels {labels.shape} are not aligned")
    lab = np.where(labels == IGNORE, 0, labels).astype(np.int64)
    table = np.array([emissivity_of(i) for i in range(int(lab.max()) + 1)])
    heat = table[lab] + 0.2 * luminance(rgb)
    heat = box_blur(heat, 5)
    if noise:
        heat = heat + np.random.default_rng(seed).normal(0.0, noise, heat.shape)
    return np.clip(heat, 0.0, 1.0)[..., None].astype(np.float32)


@dataclass
class SegSample:
    rgb: np.ndarray          # H x W x 3 in [0, 1]
    thermal: np.ndarray      # H x W x 1 in [0, 1]
    label: np.ndarray        # H x W class ids (seg) or a scalar class (cls)
    seed: tuple
    low_light: bool


@dataclass
class Dataset:
    rgb: np.ndarray          # n x H x W x 3
    thermal: np.ndarray      # n x H x W x 1
    labels: np.ndarray       # n x H x W (seg) or n (cls)
    low_light: np.ndarray    # n bools
    mode: str
    num_classes: int
    seed: int

    def __len__(self) -> int:
        return len(self.rgb)

    def __getitem__(self, i: int) -> SegSample:
        return SegSample(self.rgb[i], self.thermal[i], self.labels[i], (self.seed, i), bool(self.low_light[i]))

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        return Dataset(self.rgb[index], self.thermal[index], self.labels[index], self.low_light[index],
                       self.mode, self.num_classes, self.seed)

    def batch(self, index, zero_thermal: bool = False):
        """(rgb N x 3 x H x W, thermal N x 1 x H x W, labels) for the given sample indices."""
        index = np.asarray(index)
        rgb = np.ascontiguousarray(self.rgb[index].transpose(0, 3, 1, 2))
        th = np.ascontiguousarray(self.thermal[index].transpose(0, 3, 1, 2))
        if zero_thermal:
            th = np.zeros_like(th)
        return Tensor(rgb), Tensor(th), self.labels[index]

    def label_histogram(self) -> np.ndarray:
        if self.mode != "seg":
            return np.bincount(self.labels, minlength=self.num_classes)
        lab = self.labels[self.labels != IGNORE]
        return np.bincount(lab.ravel(), minlength=self.num_classes)


def _draw_shape(rng, kind: str, h: int, w: int, yy, xx) -> np.ndarray:
    s = min(h, w) / 64.0
    cy, cx = rng.uniform(0.15 * h, 0.85 * h), rng.uniform(0.15 * w, 0.85 * w)
    if kind == "disc":
        r = rng.uniform(8, 18) * s
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    if kind == "rect":
        hh, hw = rng.uniform(6, 16) * s, rng.uniform(6, 16) * s
        return (np.abs(yy - cy) <= hh) & (np.abs(xx - cx) <= hw)
    r = rng.uniform(10, 20) * s
    ang = rng.uniform(0, 2 * np.pi) + np.array([0, 2 * np.pi / 3, 4 * np.pi / 3])
    py, px = cy + r * np.sin(ang), cx + r * np.cos(ang)
    inside = np.ones((h, w), bool)
    sign = None
    for a in range(3):
        b = (a + 1) % 3
        cross = (px[b] - px[a]) * (yy - py[a]) - (py[b] - py[a]) * (xx - px[a])
        if sign is None:
            c = (px[1] - px[0]) * (py[2] - py[0]) - (py[1] - py[0]) * (px[2] - px[0])
            sign = 1.0 if c >= 0 else -1.0
        inside &= cross * sign >= 0
    return inside


def render_sample(seed: int, index: int, h: int, w: int, mode: str, num_classes: int,
                  low_light_frac: float = 0.5, thermal_noise: float = THERMAL_NOISE,
                  low_light_noise: float = LOW_LIGHT_NOISE):
    """Render one scene; returns (rgb, thermal, label, low_light)."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    theta = rng.uniform(0, 2 * np.pi)
    ramp = (np.cos(theta) * (xx / w - 0.5) + np.sin(theta) * (yy / h - 0.5))
    base = rng.uniform(0.3, 0.6)
    tint = palette(0) + rng.uniform(-0.05, 0.05, 3)
    rgb = np.clip(base + 0.25 * ramp, 0, 1)[..., None] * (tint / 0.5)[None, None, :]

    if mode == "seg":
        first = 1 + index % (num_classes - 1)
        choices = np.arange(1, num_classes)
    else:
        first = index % num_classes
        choices = np.arange(num_classes)
    n_shapes = int(rng.integers(2, 6))
    classes = [first] + [int(rng.choice(choices)) for _ in range(n_shapes - 1)]
    # the coverage shape is painted last so occlusion never hides it
    classes = classes[1:] + classes[:1]
    pal = np.zeros((h, w), np.int64)  # palette index per pixel
    for cls in classes:
        mask = _draw_shape(rng, str(rng.choice(["disc", "rect", "tri"])), h, w, yy, xx)
        idx = cls if mode == "seg" else cls + 1
        colour = np.clip(palette(idx) + rng.uniform(-0.05, 0.05, 3), 0, 1)
        rgb[mask] = colour
        pal[mask] = idx
    rgb = np.clip(rgb, 0, 1)

    thermal = pseudo_thermal(rgb, pal, int(rng.integers(2**31)), noise=thermal_noise)
    low = bool(rng.random() < low_light_frac)
    if low:
        rgb = np.clip(LOW_LIGHT_CONTRAST * rgb + rng.normal(0, low_light_noise, rgb.shape), 0, 1)
    if mode == "seg":
        label = pal.astype(np.uint8)
    else:
        counts = np.bincount(pal.ravel(), minlength=num_classes + 1)[1:]
        label = int(np.argmax(counts))
    return rgb.astype(np.float32), thermal, label, low


def gen_synthetic(seed: int, n: int, h: int = 64, w: int = 64, mode: str = "seg", num_classes: int = 4,
                  low_light_frac: float = 0.5, thermal_noise: float = THERMAL_NOISE,
                  low_light_noise: float = LOW_LIGHT_NOISE) -> Dataset:
    """Generate ``n`` aligned RGB / thermal / label samples, fully determined by ``seed``."""
    if h < 32 or w < 32 or h % 32 or w % 32:
        raise ContractError(f"image size {h}x{w} must be a positive multiple of 32")
    if mode not in ("seg", "cls"):
        raise ContractError(f"unknown dataset mode {mode!r}")
    if num_classes < 2 or num_classes > 255:
        raise ContractError("num_classes must be in [2, 255]")
    rgbs, ths, labs, lows = [], [], [], []
    for i in range(n):
        rgb, th, lab, low = render_sample(seed, i, h, w, mode, num_classes, low_light_frac, thermal_noise,
                                          low_light_noise)
        rgbs.append(rgb)
        ths.append(th)
        labs.append(lab)
        lows.append(low)
    labels = np.stack(labs) if mode == "seg" else np.array(labs, dtype=np.int64)
    return Dataset(np.stack(rgbs), np.stack(ths), labels, np.array(lows), mode, num_classes, seed)


def augment_batch(rng: np.random.Generator, rgb: np.ndarray, thermal: np.ndarray, labels: np.ndarray,
                  pad: int = 8):
    """Random horizontal flip plus a same-size random crop from an IGNORE-padded canvas.

    Arrays are N x C x H x W (images) and N x H x W (labels).
    """
    rgb, thermal, labels = rgb.copy(), thermal.copy(), labels.copy()
    N, _, H, W = rgb.shape
    for n in range(N):
        if rng.random() < 0.5:
            rgb[n], thermal[n], labels[n] = rgb[n, :, :, ::-1], thermal[n, :, :, ::-1], labels[n, :, ::-1]
        dy, dx = rng.integers(0, 2 * pad + 1, size=2)
        pr = np.pad(rgb[n], ((0, 0), (pad, pad), (pad, pad)))
        pt = np.pad(thermal[n], ((0, 0), (pad, pad), (pad, pad)))
        pl = np.pad(labels[n], pad, constant_values=IGNORE)
        rgb[n] = pr[:, dy:dy + H, dx:dx + W]
        thermal[n] = pt[:, dy:dy + H, dx:dx + W]
        labels[n] = pl[dy:dy + H, dx:dx + W]
    return rgb, thermal, labels
