"""Command-line entry point: ``tuni <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np

from tuni import checkpoint, cost, pnm
from tuni.config import TrainConfig, load_config, parse_config, sidecar_path
from tuni.data import Dataset, gen_synthetic
from tuni.encoder import VARIANTS, build_variant
from tuni.errors import ConfigError, TuniError
from tuni.model import build_model
from tuni.train import evaluate, predict_logits, train


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _hw(text: str) -> tuple[int, int]:
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tuni", description="RGB-thermal segmentation toolkit")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("pretrain", help="classification pre-training")
    s.add_argument("--config", required=True)
    s.add_argument("--out", help="checkpoint directory (overrides out_dir)")

    s = sub.add_parser("train", help="segmentation fine-tuning")
    s.add_argument("--config", required=True)
    s.add_argument("--init", help="pre-trained checkpoint whose encoder.* weights seed the model")
    s.add_argument("--out", help="checkpoint directory (overrides out_dir)")

    s = sub.add_parser("eval", help="per-class IoU and mIoU on a generated data directory")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--zero-thermal", action="store_true", help="evaluate with the thermal input zeroed")

    s = sub.add_parser("predict", help="write a class-id map for one image pair")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--rgb", required=True)
    s.add_argument("--thermal", required=True)
    s.add_argument("--out", required=True)

    s = sub.add_parser("cost", help="parameter and FLOP report")
    s.add_argument("--config")
    s.add_argument("--variant", choices=VARIANTS)
    s.add_argument("--hw", type=_hw)
    s.add_argument("--json", action="store_true")

    s = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    s.add_argument("--seed", type=int, default=0, help="first of five consecutive seeds")

    s = sub.add_parser("gen", help="write a synthetic segmentation dataset as PNM files")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, default=8)
    s.add_argument("--hw", type=_hw, default=(64, 64))
    s.add_argument("--classes", type=int, default=4)
    s.add_argument("--low-light-frac", type=float, default=0.5)
    return p


def _load_train_config(args, mode: str) -> TrainConfig:
    cfg = load_config(args.config)
    changes = {"mode": mode}
    if args.out:
        changes["out_dir"] = args.out
    return dataclasses.replace(cfg, **changes)


def _print_log(step: int, name: str, value: float) -> None:
    print(f"step {step} {name} {value:.6f}", flush=True)


def cmd_train(args, mode: str) -> int:
    cfg = _load_train_config(args, mode)
    init = getattr(args, "init", None)
    res = train(cfg, init=init, log=_print_log)
    label = "accuracy" if mode == "pretrain" else "miou"
    print(f"best {label} {res.best_metric:.6f} at step {res.best_step}")
    if cfg.out_dir:
        print(f"checkpoints written to {cfg.out_dir}")
    return 0


def _model_from_ckpt(path: str, task: str = "seg"):
    side = sidecar_path(path)
    if not os.path.exists(side):
        raise ConfigError(f"missing config sidecar {side}")
    with open(side, encoding="utf-8") as fh:
        cfg = parse_config(fh.read())
    model, registry = build_model(cfg.model, task=task)
    checkpoint.load(path, registry, strict=True)
    return model, cfg


def read_data_dir(path: str, num_classes: int) -> Dataset:
    names = sorted(f for f in os.listdir(path) if f.startswith("rgb_") and f.endswith(".ppm"))
    if not names:
        raise TuniError(f"no rgb_*.ppm files in {path}")
    rgb, th, lab = [], [], []
    for name in names:
        stem = name[len("rgb_"):-len(".ppm")]
        rgb.append(pnm.read_pnm(os.path.join(path, name)))
        th.append(pnm.read_pnm(os.path.join(path, f"thermal_{stem}.pgm"))[..., None])
        lab.append(pnm.read_pnm(os.path.join(path, f"label_{stem}.pgm"), raw=True))
    return Dataset(np.stack(rgb), np.stack(th), np.stack(lab), np.zeros(len(names), bool), "seg", num_classes, 0)


def cmd_eval(args) -> int:
    model, cfg = _model_from_ckpt(args.ckpt)
    data = read_data_dir(args.data, cfg.model.num_classes)
    res = evaluate(model, data, cfg.batch_size, zero_thermal=args.zero_thermal)
    for k, iou in enumerate(res.per_class):
        print(f"class {k} iou {'nan' if np.isnan(iou) else f'{iou:.6f}'}")
    print(f"miou {res.metric:.6f}")
    return 0


def _pad32(x: np.ndarray) -> np.ndarray:
    """Edge-pad an H x W x C image at the bottom/right to multiples of 32."""
    h, w = x.shape[:2]
    ph, pw = -h % 32, -w % 32
    return np.pad(x, ((0, ph), (0, pw), (0, 0)), mode="edge") if ph or pw else x


def cmd_predict(args) -> int:
    model, _ = _model_from_ckpt(args.ckpt)
    rgb = pnm.read_pnm(args.rgb)
    th = pnm.read_pnm(args.thermal)
    if rgb.ndim != 3:
        raise TuniError(f"{args.rgb} is not an RGB (P6) image")
    if th.ndim != 2:
        raise TuniError(f"{args.thermal} is not a grayscale (P5) image")
    if rgb.shape[:2] != th.shape:
        raise TuniError(f"RGB {rgb.shape[:2]} and thermal {th.shape} sizes differ")
    h, w = th.shape
    r = _pad32(rgb).transpose(2, 0, 1)[None]
    t = _pad32(th[..., None]).transpose(2, 0, 1)[None]
    logits = predict_logits(model, np.ascontiguousarray(r), np.ascontiguousarray(t))
    pred = logits[0].argmax(axis=0)[:h, :w].astype(np.uint8)
    pnm.write_pnm(args.out, pred)
    return 0


def cmd_cost(args) -> int:
    cfg = load_config(args.config) if args.config else TrainConfig()
    model_cfg = build_variant(cfg.model, args.variant) if args.variant else cfg.model
    h, w = args.hw if args.hw else (cfg.height, cfg.width)
    report = cost.count_flops(model_cfg, h, w)
    sys.stdout.write(cost.emit_report(report, "json" if args.json else "text").decode())
    return 0


def cmd_gradcheck(args) -> int:
    from tuni.gradsuite import run_suite
    results = run_suite(seeds=range(args.seed, args.seed + 5), log=print)
    failed = sorted({r.name for r in results if not r.passed})
    print(f"{len(results)} checks, {len(failed)} failing cases" + (f": {', '.join(failed)}" if failed else ""))
    return 0 if not failed else 2


def cmd_gen(args) -> int:
    h, w = args.hw
    data = gen_synthetic(args.seed, args.n, h, w, "seg", args.classes, low_light_frac=args.low_light_frac)
    os.makedirs(args.out, exist_ok=True)
    for i in range(len(data)):
        pnm.write_pnm(os.path.join(args.out, f"rgb_{i:04d}.ppm"), data.rgb[i])
        pnm.write_pnm(os.path.join(args.out, f"thermal_{i:04d}.pgm"), data.thermal[i])
        pnm.write_pnm(os.path.join(args.out, f"label_{i:04d}.pgm"), data.labels[i])
    with open(os.path.join(args.out, "meta.txt"), "w", encoding="utf-8") as fh:
        fh.write(f"seed = {args.seed}\nn = {args.n}\nheight = {h}\nwidth = {w}\nnum_classes = {args.classes}\n")
        fh.write("low_light = " + ",".join(str(int(v)) for v in data.low_light) + "\n")
    print(f"wrote {args.n} samples to {args.out}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        sys.stderr.write(str(e))
        return 1
    except SystemExit as e:  # --help
        return int(e.code or 0)
    handlers = {
        "pretrain": lambda a: cmd_train(a, "pretrain"),
        "train": lambda a: cmd_train(a, "finetune"),
        "eval": cmd_eval,
        "predict": cmd_predict,
        "cost": cmd_cost,
        "gradcheck": cmd_gradcheck,
        "gen": cmd_gen,
    }
    try:
        return handlers[args.command](args)
    except (TuniError, OSError, ValueError) as e:
        sys.stderr.write(f"tuni {args.command}: {e}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
