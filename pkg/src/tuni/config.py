"""Plain-text ``key = value`` configuration files (one key per line, ``#`` comments)."""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field

from tuni.encoder import ModelConfig
from tuni.errors import ConfigError

MODES = ("pretrain", "finetune")


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "finetune"
    base_lr: float = 1e-3
    weight_decay: float = 0.05
    power: float = 0.9
    max_iter: int = 500
    batch_size: int = 8
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    class_weights: str = "auto"       # auto (from the training histogram) or uniform
    # data
    data_seed: int = 0
    n_train: int = 8
    n_eval: int = 8
    height: int = 64
    width: int = 64
    low_light_frac: float = 0.5
    augment: bool = False
    # evaluation and stopping
    eval_interval: int = 25
    eval_split: str = "eval"          # eval (held-out) or train
    target: float = 0.0               # stop once the eval metric reaches this; 0 disables
    out_dir: str = ""

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.base_lr > 0:
            raise ConfigError(f"base_lr must be > 0, got {self.base_lr}")
        if not 0 < self.power <= 1:
            raise ConfigError(f"power must be in (0, 1], got {self.power}")
        if self.max_iter < 0:
            raise ConfigError(f"max_iter must be >= 0, got {self.max_iter}")
        if self.batch_size < 1 or self.n_train < 1 or self.n_eval < 1 or self.eval_interval < 1:
            raise ConfigError("batch_size, n_train, n_eval and eval_interval must be >= 1")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.class_weights not in ("auto", "uniform"):
            raise ConfigError(f"class_weights must be auto or uniform, got {self.class_weights!r}")
        if self.eval_split not in ("eval", "train"):
            raise ConfigError(f"eval_split must be eval or train, got {self.eval_split!r}")
        if self.height % 32 or self.width % 32 or self.height < 32 or self.width < 32:
            raise ConfigError(f"height and width must be positive multiples of 32, got {self.height}x{self.width}")
        if not 0 <= self.low_light_frac <= 1:
            raise ConfigError("low_light_frac must be in [0, 1]")

    @property
    def task(self) -> str:
        return "cls" if self.mode == "pretrain" else "seg"


_MODEL_FIELDS = {f.name: f for f in dataclasses.fields(ModelConfig)}
_TRAIN_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig) if f.name != "model"}


def _convert(key: str, raw: str, default):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, tuple):
            return tuple(int(v) for v in raw.replace(" ", "").split(",") if v)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_config(text: str) -> TrainConfig:
    """Parse config text. Model keys may be written bare or as ``model.<key>``."""
    model_kw, train_kw = {}, {}
    model_defaults = ModelConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        bare = key[len("model."):] if key.startswith("model.") else key
        if bare in _MODEL_FIELDS and (key.startswith("model.") or bare not in _TRAIN_FIELDS):
            model_kw[bare] = _convert(key, raw, getattr(model_defaults, bare))
        elif key in _TRAIN_FIELDS:
            train_kw[key] = _convert(key, raw, _TRAIN_FIELDS[key].default)
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    return TrainConfig(model=ModelConfig(**model_kw), **train_kw)


def format_config(cfg: TrainConfig) -> str:
    lines = []
    for name in _TRAIN_FIELDS:
        lines.append(f"{name} = {_fmt(getattr(cfg, name))}")
    for name in _MODEL_FIELDS:
        lines.append(f"model.{name} = {_fmt(getattr(cfg.model, name))}")
    return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def load_config(path: str | os.PathLike) -> TrainConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from None


def sidecar_path(ckpt_path: str | os.PathLike) -> str:
    return os.fspath(ckpt_path) + ".cfg"
