"""MLP segmentation decoder, weighted cross-entropy + dice loss, and mIoU."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tuni import autodiff as ad
from tuni.autodiff import Tensor
from tuni.encoder import EncoderOutput
from tuni.errors import ContractError
from tuni.layers import Linear, Module

IGNORE = 255
DICE_EPS = 1.0


class MLPDecoder(Module):
    """Project each RGB stage map to a common width, upsample to the first
    stage's resolution, fuse, classify, and upsample x4 to the input size."""

    def __init__(self, channels, dim: int, num_classes: int):
        super().__init__()
        self.projs = [self.add_module(f"proj{i + 1}", Linear(c, dim)) for i, c in enumerate(channels)]
        self.fuse = Linear(len(channels) * dim, dim)
        self.classify = Linear(dim, num_classes)

    def __call__(self, enc: EncoderOutput) -> Tensor:
        if len(enc.rgb) != len(self.projs):
            raise ContractError(f"decoder expects {len(self.projs)} stage maps, got {len(enc.rgb)}")
        h, w = enc.rgb[0].shape[-2:]
        parts = []
        for proj, r in zip(self.projs, enc.rgb):
            y = proj(r)
            if y.shape[-2:] != (h, w):
                y = ad.bilinear_upsample(y, h, w)
            parts.append(y)
        fused = ad.relu(self.fuse(ad.concat(parts, axis=1)))
        logits = self.classify(fused)
        return ad.bilinear_upsample(logits, 4 * h, 4 * w)


def mlp_decode(enc: EncoderOutput, decoder: MLPDecoder) -> Tensor:
    return decoder(enc)


@dataclass
class SegBatch:
    pre_logits: Tensor            # N x K x H x W
    gt: np.ndarray                # N x H x W, class ids or IGNORE
    class_weights: np.ndarray     # K

    def __post_init__(self):
        K = self.pre_logits.shape[1]
        self.gt = np.asarray(self.gt)
        if self.gt.shape != (self.pre_logits.shape[0],) + self.pre_logits.shape[2:]:
            raise ContractError(f"label map {self.gt.shape} does not match logits {self.pre_logits.shape}")
        bad = (self.gt != IGNORE) & ((self.gt < 0) | (self.gt >= K))
        if bad.any():
            raise ContractError("label map holds ids outside {0..K-1} and IGNORE")
        w = np.asarray(self.class_weights, dtype=np.float64)
        if w.shape != (K,) or not np.all(np.isfinite(w)) or (w < 0).any() or not (w > 0).any():
            raise ContractError("class weights must be K finite non-negative values, at least one positive")
        self.class_weights = w

    @property
    def valid(self) -> np.ndarray:
        return self.gt != IGNORE

    def one_hot(self) -> np.ndarray:
        K = self.pre_logits.shape[1]
        oh = self.gt[:, None] == np.arange(K).reshape(1, K, *([1] * (self.gt.ndim - 1)))
        return oh & self.valid[:, None]


def class_weights(label_histogram) -> np.ndarray:
    """w_c = 1 / ln(1.02 + freq_c) with freq_c the pixel fraction of class c."""
    hist = np.asarray(label_histogram, dtype=np.float64)
    total = hist.sum()
    if total <= 0:
        raise ContractError("label histogram is empty")
    return 1.0 / np.log(1.02 + hist / total)


def weighted_ce(batch: SegBatch) -> Tensor:
    """Mean weighted cross-entropy over non-ignored pixels, normalized by the
    sum of the weights actually applied."""
    logits = batch.pre_logits
    if not batch.valid.any():
        raise ContractError("every pixel is IGNORE")
    K = logits.shape[1]
    weights = batch.one_hot() * batch.class_weights.reshape(1, K, 1, 1)
    denom = weights.sum()
    if denom <= 0:
        raise ContractError("all labelled pixels carry zero class weight")
    picked = ad.reduce(ad.mul(ad.log_softmax(logits, 1), Tensor(weights.astype(logits.dtype))), None, "sum")
    return ad.mul(picked, -1.0 / denom)


def dice_loss(batch: SegBatch, eps: float = DICE_EPS) -> Tensor:
    """Soft dice on softmax probabilities, masked by IGNORE, averaged over classes."""
    logits = batch.pre_logits
    dt = logits.dtype
    probs = ad.softmax(logits, 1)
    mask = Tensor(batch.valid[:, None].astype(dt))
    onehot = batch.one_hot().astype(dt)
    pm = ad.mul(probs, mask)
    inter = ad.reduce(ad.mul(pm, Tensor(onehot)), (0, 2, 3), "sum")
    psum = ad.reduce(pm, (0, 2, 3), "sum")
    gsum = onehot.sum(axis=(0, 2, 3))
    ratio = ad.div(ad.add(ad.mul(inter, 2.0), eps), ad.add(psum, Tensor((gsum + eps).astype(dt))))
    return ad.sub(1.0, ad.reduce(ratio, None, "mean"))


def total_loss(batch: SegBatch) -> Tensor:
    return ad.add(weighted_ce(batch), dice_loss(batch))


class ConfusionMatrix:
    """K x K counts, rows = ground truth, columns = prediction; IGNORE excluded."""

    def __init__(self, num_classes: int, counts: np.ndarray | None = None):
        self.num_classes = num_classes
        self.counts = np.zeros((num_classes, num_classes), np.int64) if counts is None else counts.astype(np.int64)

    def update(self, pred: np.ndarray, gt: np.ndarray) -> "ConfusionMatrix":
        pred, gt = np.asarray(pred).ravel(), np.asarray(gt).ravel()
        keep = gt != IGNORE
        K = self.num_classes
        idx = gt[keep].astype(np.int64) * K + pred[keep].astype(np.int64)
        self.counts += np.bincount(idx, minlength=K * K).reshape(K, K)
        return self

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.num_classes, self.counts + other.counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def miou(conf: ConfusionMatrix) -> tuple[float, np.ndarray]:
    """Mean IoU over classes with a non-empty union; per-class IoU is NaN otherwise."""
    if conf.total == 0:
        raise ContractError("confusion matrix is empty")
    c = conf.counts.astype(np.float64)
    tp = np.diag(c)
    union = c.sum(axis=0) + c.sum(axis=1) - tp
    iou = np.full(conf.num_classes, np.nan)
    present = union > 0
    iou[present] = tp[present] / union[present]
    return float(np.mean(iou[present])), iou
