"""AdamW with decoupled weight decay and the polynomial learning-rate schedule."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from tuni.errors import ContractError, DimensionError


@dataclass
class AdamWState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray | None], state: AdamWState,
               lr: float, betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
               weight_decay: float = 0.0) -> None:
    """Update ``params`` in place: w <- w * (1 - lr * wd), then the bias-corrected Adam step.

    A missing gradient is treated as zero (decay still applies).
    """
    b1, b2 = betas
    state.step += 1
    t = state.step
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, w in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(w)
        elif g.shape != w.shape:
            raise DimensionError(f"{name}: gradient {g.shape} vs parameter {w.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(w)
            state.v[name] = np.zeros_like(w)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        if weight_decay:
            w *= 1.0 - lr * weight_decay
        w -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


class AdamW:
    def __init__(self, registry, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.05):
        self.registry = registry
        self.lr, self.betas, self.eps, self.weight_decay = lr, betas, eps, weight_decay
        self.state = AdamWState()

    def step(self, lr: float | None = None) -> None:
        params = {n: t.data for n, t in self.registry.items()}
        grads = {n: t.grad for n, t in self.registry.items()}
        adamw_step(params, grads, self.state, self.lr if lr is None else lr, self.betas, self.eps, self.weight_decay)


def poly_lr(base_lr: float, it: int, max_iter: int, power: float = 0.9) -> float:
    """base_lr * (1 - it / max_iter) ** power, and 0 once ``it`` reaches ``max_iter``."""
    if it < 0 or max_iter < 1:
        raise ContractError(f"poly_lr needs 0 <= it and max_iter >= 1 (got {it}, {max_iter})")
    if it >= max_iter:
        return 0.0
    return base_lr * (1.0 - it / max_iter) ** power
