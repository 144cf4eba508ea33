"""Deterministic two-phase training: classification pre-training and segmentation fine-tuning."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from tuni import autodiff as ad
from tuni import checkpoint
from tuni.autodiff import Tensor
from tuni.config import TrainConfig, format_config, sidecar_path
from tuni.data import Dataset, augment_batch, gen_synthetic
from tuni.head import ConfusionMatrix, SegBatch, class_weights, miou, total_loss
from tuni.model import build_model
from tuni.optim import AdamW, poly_lr


@dataclass
class EvalResult:
    metric: float                          # mIoU (seg) or accuracy (cls)
    per_class: np.ndarray | None = None    # per-class IoU for seg
    confusion: ConfusionMatrix | None = None


@dataclass
class TrainResult:
    model: object
    registry: object
    losses: list[float] = field(default_factory=list)
    evals: list[tuple[int, float]] = field(default_factory=list)
    best_metric: float = float("-inf")
    best_step: int = -1
    steps_to_target: int | None = None
    steps_run: int = 0


def make_data(cfg: TrainConfig) -> tuple[Dataset, Dataset]:
    """Training and held-out splits; the held-out split uses a disjoint seed stream."""
    kw = dict(h=cfg.height, w=cfg.width, mode=cfg.task, num_classes=cfg.model.num_classes,
              low_light_frac=cfg.low_light_frac)
    train = gen_synthetic(cfg.data_seed, cfg.n_train, **kw)
    held = gen_synthetic(cfg.data_seed + 1_000_003, cfg.n_eval, **kw)
    return train, held


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("TUNI_THREADS", "1")))
    except ValueError:
        return 1


def predict_logits(model, rgb: np.ndarray, thermal: np.ndarray) -> np.ndarray:
    with ad.no_grad():
        return model(Tensor(rgb), Tensor(thermal)).data


def evaluate(model, data: Dataset, batch_size: int = 8, zero_thermal: bool = False) -> EvalResult:
    """mIoU (seg) or accuracy (cls); batches run in parallel up to TUNI_THREADS."""
    chunks = [np.arange(i, min(i + batch_size, len(data))) for i in range(0, len(data), batch_size)]

    def run(idx):
        rgb, th, lab = data.batch(idx, zero_thermal=zero_thermal)
        return predict_logits(model, rgb.data, th.data).argmax(axis=1), lab

    n = _threads()
    if n > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=n) as pool:
            outs = list(pool.map(run, chunks))
    else:
        outs = [run(c) for c in chunks]
    if data.mode == "cls":
        correct = sum(int((p == l).sum()) for p, l in outs)
        return EvalResult(correct / len(data))
    conf = ConfusionMatrix(data.num_classes)
    for p, l in outs:
        conf.update(p, l)
    m, per = miou(conf)
    return EvalResult(m, per, conf)


def cls_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Plain mean cross-entropy for N x K logits."""
    K = logits.shape[1]
    onehot = (labels[:, None] == np.arange(K)[None]).astype(logits.dtype)
    picked = ad.reduce(ad.mul(ad.log_softmax(logits, 1), Tensor(onehot)), None, "sum")
    return ad.mul(picked, -1.0 / len(labels))


class EpochSampler:
    """Reshuffles the index set every epoch from a seeded generator; batches never straddle epochs."""

    def __init__(self, n: int, batch_size: int, seed: int):
        self.n, self.batch_size = n, min(batch_size, n)
        self.rng = np.random.default_rng(seed)
        self.order, self.pos = np.empty(0, np.int64), 0

    def next(self) -> np.ndarray:
        if self.pos + self.batch_size > len(self.order):
            self.order, self.pos = self.rng.permutation(self.n), 0
        idx = self.order[self.pos:self.pos + self.batch_size]
        self.pos += self.batch_size
        return np.sort(idx)


def _save(path: str, registry, cfg: TrainConfig) -> None:
    checkpoint.save(path, registry)
    with open(sidecar_path(path), "w", encoding="utf-8") as fh:
        fh.write(format_config(cfg))


def train(cfg: TrainConfig, data: tuple[Dataset, Dataset] | None = None, init: str | None = None,
          log=None, early_stop: bool = True) -> TrainResult:
    """Run the loop described by ``cfg``; ``init`` prefix-loads encoder weights from a checkpoint.

    ``log`` is called with (step, name, value) for every loss and evaluation.
    """
    train_data, held = data if data is not None else make_data(cfg)
    eval_data = train_data if cfg.eval_split == "train" else held
    model, registry = build_model(cfg.model, task=cfg.task, seed=cfg.seed)
    if init:
        checkpoint.load(init, registry, strict=False, prefix="encoder.")
    if cfg.task == "seg":
        weights = (class_weights(train_data.label_histogram()) if cfg.class_weights == "auto"
                   else np.ones(cfg.model.num_classes))
    opt = AdamW(registry, lr=cfg.base_lr, weight_decay=cfg.weight_decay)
    sampler = EpochSampler(len(train_data), cfg.batch_size, cfg.seed)
    aug_rng = np.random.default_rng([cfg.seed, 1])
    result = TrainResult(model, registry)
    best_path = final_path = None
    if cfg.out_dir:
        os.makedirs(cfg.out_dir, exist_ok=True)
        best_path = os.path.join(cfg.out_dir, "best.ckpt")
        final_path = os.path.join(cfg.out_dir, "final.ckpt")

    for it in range(cfg.max_iter):
        rgb, th, lab = train_data.batch(sampler.next())
        if cfg.augment and cfg.task == "seg":
            r, t, lab = augment_batch(aug_rng, rgb.data, th.data, lab)
            rgb, th = Tensor(r), Tensor(t)
        model.zero_grad()
        with ad.Graph():
            logits = model(rgb, th)
            loss = cls_loss(logits, lab) if cfg.task == "cls" else total_loss(SegBatch(logits, lab, weights))
            ad.backward(loss)
        opt.step(poly_lr(cfg.base_lr, it, cfg.max_iter, cfg.power))
        value = float(loss.data)
        result.losses.append(value)
        result.steps_run = it + 1
        if log:
            log(it + 1, "loss", value)
        if (it + 1) % cfg.eval_interval == 0 or it + 1 == cfg.max_iter:
            metric = evaluate(model, eval_data, cfg.batch_size).metric
            result.evals.append((it + 1, metric))
            if log:
                log(it + 1, "accuracy" if cfg.task == "cls" else "miou", metric)
            if metric > result.best_metric:
                result.best_metric, result.best_step = metric, it + 1
                if best_path:
                    _save(best_path, registry, cfg)
            if cfg.target and metric >= cfg.target and result.steps_to_target is None:
                result.steps_to_target = it + 1
                if early_stop:
                    break
    if final_path:
        _save(final_path, registry, cfg)
        if best_path and result.best_step < 0:
            _save(best_path, registry, cfg)
    return result
