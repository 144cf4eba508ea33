"""Parameterized layers, a named-parameter registry, and initialization."""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from tuni import autodiff as ad
from tuni.autodiff import Tensor
from tuni.errors import ContractError, DimensionError

INIT_STD = 0.02


class Module:
    """Minimal container that records parameters and submodules in assignment order."""

    def __init__(self):
        object.__setattr__(self, "_params", OrderedDict())
        object.__setattr__(self, "_children", OrderedDict())

    def __setattr__(self, name, value):
        if isinstance(value, Tensor):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def add_module(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        object.__setattr__(self, name, module)
        return module

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def layer_specs(self, prefix: str = "") -> Iterator[tuple[str, "LayerSpec"]]:
        spec = getattr(self, "spec", None)
        if spec is not None:
            yield prefix.rstrip("."), spec
            return
        for name, child in self._children.items():
            yield from child.layer_specs(prefix + name + ".")


class ParamRegistry:
    """Ordered map from dotted parameter name to tensor."""

    def __init__(self, items=()):
        self._items: OrderedDict[str, Tensor] = OrderedDict()
        seen: set[int] = set()
        for name, t in items:
            if name in self._items:
                raise ContractError(f"duplicate parameter name {name!r}")
            if id(t) in seen:
                raise ContractError(f"parameter {name!r} registered twice")
            seen.add(id(t))
            self._items[name] = t

    @classmethod
    def from_module(cls, root: Module, prefix: str = "") -> "ParamRegistry":
        return cls(root.named_parameters(prefix))

    def __getitem__(self, name: str) -> Tensor:
        return self._items[name]

    def __contains__(self, name: str) -> bool:
        return name in self._items

    def __iter__(self):
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def names(self) -> list[str]:
        return list(self._items)

    def items(self):
        return self._items.items()

    def tensors(self) -> list[Tensor]:
        return list(self._items.values())

    def numel(self) -> int:
        return sum(t.size for t in self._items.values())

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self._items.items()}


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # linear | dwconv | conv | layernorm | se
    in_channels: int
    out_channels: int
    kernel: int = 1
    stride: int = 1
    pad: int = 0
    groups: int = 1
    se_reduction: int = 4

    @property
    def se_hidden(self) -> int:
        return max(1, self.in_channels // self.se_reduction)

    def param_count(self) -> int:
        i, o, k = self.in_channels, self.out_channels, self.kernel
        if self.kind == "linear":
            return i * o + o
        if self.kind == "dwconv":
            return i * k * k + i
        if self.kind == "conv":
            return i * o * k * k // self.groups + o
        if self.kind == "layernorm":
            return 2 * i
        if self.kind == "se":
            h = self.se_hidden
            return i * h + h + h * i + i
        raise ValueError(f"unknown layer kind {self.kind!r}")


# -- functional forms -----------------------------------------------------------

def linear_forward(x: Tensor, weight: Tensor, bias: Tensor | None) -> Tensor:
    """y = x W + b over the last axis of a 2-d input, or over channels of an NCHW map."""
    cin = weight.shape[0]
    if x.ndim == 4:
        if x.shape[1] != cin:
            raise DimensionError(f"linear: expected {cin} channels, got {x.shape[1]}")
        return ad.channel_linear(x, weight, bias)
    if x.shape[-1] != cin:
        raise DimensionError(f"linear: expected last axis {cin}, got {x.shape[-1]}")
    y = ad.matmul(x, weight)
    return y if bias is None else ad.add(y, bias)


def layernorm_forward(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    return ad.layernorm_channels(x, gamma, beta, eps)


# -- layers ---------------------------------------------------------------------

class Linear(Module):
    def __init__(self, cin: int, cout: int, bias: bool = True):
        super().__init__()
        self.spec = LayerSpec("linear", cin, cout)
        self.weight = Tensor(np.zeros((cin, cout), np.float32), requires_grad=True)
        if bias:
            self.bias = Tensor(np.zeros(cout, np.float32), requires_grad=True)
        else:
            object.__setattr__(self, "bias", None)

    def __call__(self, x: Tensor) -> Tensor:
        return linear_forward(x, self.weight, self.bias)


class DWConv(Module):
    """k x k depthwise convolution with bias, stride 1, same padding."""

    def __init__(self, channels: int, kernel: int = 3):
        super().__init__()
        self.spec = LayerSpec("dwconv", channels, channels, kernel=kernel, pad=kernel // 2, groups=channels)
        self.weight = Tensor(np.zeros((channels, 1, kernel, kernel), np.float32), requires_grad=True)
        self.bias = Tensor(np.zeros(channels, np.float32), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        s = self.spec
        return ad.conv2d(x, self.weight, self.bias, stride=1, pad=s.pad, groups=s.in_channels)


class Conv(Module):
    def __init__(self, cin: int, cout: int, kernel: int = 3, stride: int = 1, groups: int = 1):
        super().__init__()
        if cin % groups or cout % groups:
            raise DimensionError(f"groups={groups} does not divide {cin}->{cout}")
        self.spec = LayerSpec("conv", cin, cout, kernel=kernel, stride=stride, pad=kernel // 2, groups=groups)
        self.weight = Tensor(np.zeros((cout, cin // groups, kernel, kernel), np.float32), requires_grad=True)
        self.bias = Tensor(np.zeros(cout, np.float32), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        s = self.spec
        return ad.conv2d(x, self.weight, self.bias, stride=s.stride, pad=s.pad, groups=s.groups)


class LayerNorm(Module):
    def __init__(self, channels: int, eps: float = 1e-6):
        super().__init__()
        self.spec = LayerSpec("layernorm", channels, channels)
        self.eps = eps
        self.gamma = Tensor(np.ones(channels, np.float32), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, np.float32), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return layernorm_forward(x, self.gamma, self.beta, self.eps)


class SE(Module):
    """Squeeze-and-excitation gate on an (N, C) vector: sigmoid(FC2(relu(FC1(w))))."""

    def __init__(self, channels: int, reduction: int = 4):
        super().__init__()
        self.spec = LayerSpec("se", channels, channels, se_reduction=reduction)
        h = self.spec.se_hidden
        self.fc1_weight = Tensor(np.zeros((channels, h), np.float32), requires_grad=True)
        self.fc1_bias = Tensor(np.zeros(h, np.float32), requires_grad=True)
        self.fc2_weight = Tensor(np.zeros((h, channels), np.float32), requires_grad=True)
        self.fc2_bias = Tensor(np.zeros(channels, np.float32), requires_grad=True)

    def __call__(self, w: Tensor) -> Tensor:
        return se_forward(w, self)


def se_forward(w: Tensor, se: SE) -> Tensor:
    hidden = ad.relu(linear_forward(w, se.fc1_weight, se.fc1_bias))
    return ad.sigmoid(linear_forward(hidden, se.fc2_weight, se.fc2_bias))


class Stem(Module):
    """Two 3x3 stride-2 convolutions, each followed by layer norm and GELU (H -> H/4)."""

    def __init__(self, cin: int, cout: int):
        super().__init__()
        mid = max(1, cout // 2)
        self.conv1 = Conv(cin, mid, 3, stride=2)
        self.norm1 = LayerNorm(mid)
        self.conv2 = Conv(mid, cout, 3, stride=2)
        self.norm2 = LayerNorm(cout)

    def __call__(self, x: Tensor) -> Tensor:
        H, W = x.shape[-2:]
        if H % 4 or W % 4:
            raise ContractError(f"stem input {H}x{W} is not divisible by 4")
        x = ad.gelu(self.norm1(self.conv1(x)))
        return ad.gelu(self.norm2(self.conv2(x)))


def stem_forward(x: Tensor, stem: Stem) -> Tensor:
    return stem(x)


class Downsample(Module):
    """3x3 stride-2 convolution followed by layer norm."""

    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.conv = Conv(cin, cout, 3, stride=2)
        self.norm = LayerNorm(cout)

    def __call__(self, x: Tensor) -> Tensor:
        return self.norm(self.conv(x))


# -- initialization -------------------------------------------------------------

def trunc_normal(rng: np.random.Generator, shape, std: float = INIT_STD, bound: float = 2.0) -> np.ndarray:
    """Normal(0, std) samples truncated to +-bound*std by resampling."""
    z = rng.standard_normal(shape)
    bad = np.abs(z) > bound
    while bad.any():
        z[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(z) > bound
    return z * std


def init_params(registry: ParamRegistry, scheme: str = "trunc_normal", seed: int = 0) -> None:
    """Weights ~ truncated normal(0, 0.02) at +-2 sigma, norm gains 1, biases 0."""
    if scheme != "trunc_normal":
        raise ValueError(f"unknown init scheme {scheme!r}")
    rng = np.random.default_rng(seed)
    for name, t in registry.items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf.endswith("bias") or leaf == "beta":
            t.data[...] = 0
        elif leaf == "gamma":
            t.data[...] = 1
        else:
            t.data[...] = trunc_normal(rng, t.shape)
        t.grad = None
