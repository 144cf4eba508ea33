"""Dense tensors with define-by-run reverse-mode differentiation.

Image tensors are row-major N x C x H x W everywhere. Ops executed while a
tensor that requires gradients is involved are appended to the active
:class:`Graph`; :func:`backward` walks that record in reverse append order.
A graph can be consumed by exactly one backward pass.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from tuni import kernels
from tuni.errors import ContractError, DimensionError, NonFiniteError

DEFAULT_DTYPE = np.float32

_state = threading.local()


def _tls():
    if not hasattr(_state, "stack"):
        _state.stack = []
        _state.default = None
        _state.grad_enabled = True
    return _state


class Graph:
    """Append-only tape of executed ops, confined to the thread that builds it."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.consumed = False
        self.generation = 0

    def __enter__(self) -> "Graph":
        _tls().stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tls().stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def reset(self) -> None:
        """Drop all nodes; tensors recorded before the reset become stale."""
        self.nodes = []
        self.consumed = False
        self.generation += 1


@dataclass
class Node:
    kind: str
    inputs: tuple
    output: "Tensor"
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


def current_graph() -> Graph:
    st = _tls()
    if st.stack:
        return st.stack[-1]
    if st.default is None:
        st.default = Graph()
    return st.default


class no_grad:
    """Context manager that disables graph recording on this thread."""

    def __enter__(self):
        st = _tls()
        self.prev = st.grad_enabled
        st.grad_enabled = False

    def __exit__(self, *exc):
        _tls().grad_enabled = self.prev


def grad_enabled() -> bool:
    return _tls().grad_enabled


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_graph", "_gen", "name")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            arr = np.asarray(data)
            dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else DEFAULT_DTYPE
        self.data = np.array(data, dtype=dtype, copy=True) if not isinstance(data, np.ndarray) or data.dtype != dtype else data
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._graph: Graph | None = None
        self._gen = 0
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._graph is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other, self.dtype), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return reduce(self, axis, "sum", keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce(self, axis, "mean", keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


def _as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype or DEFAULT_DTYPE))


def apply_op(data: np.ndarray, inputs: Sequence[Tensor], kind: str, backward_fn) -> Tensor:
    """Wrap ``data`` as the output of op ``kind`` and record it if needed.

    ``backward_fn(grad_out)`` must return one gradient (or None) per input.
    """
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{kind} produced non-finite values")
    needs = _tls().grad_enabled and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs, dtype=data.dtype)
    if needs:
        graph = current_graph()
        if graph.consumed:
            raise ContractError("graph was already consumed by backward; reset it or open a new Graph")
        for t in inputs:
            if t._graph is not None and (t._graph is not graph or t._gen != graph.generation):
                raise ContractError(f"{kind}: input tensor belongs to a stale or foreign graph")
        graph.nodes.append(Node(kind, tuple(inputs), out, backward_fn))
        out._graph = graph
        out._gen = graph.generation
    return out


def backward(loss: Tensor, graph: Graph | None = None) -> None:
    """Populate ``.grad`` of every requires-grad leaf reachable from ``loss``."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad or loss._graph is None:
        raise ContractError("loss does not depend on any tensor that requires grad")
    graph = graph or loss._graph
    if loss._graph is not graph:
        raise ContractError("loss was not produced by the given graph")
    if graph.consumed or loss._gen != graph.generation:
        raise ContractError("backward on a stale graph")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            if inp._graph is None:
                gi = np.asarray(gi, dtype=inp.dtype).reshape(inp.shape)
                inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
            else:
                key = id(inp)
                grads[key] = gi if key not in grads else grads[key] + gi
    graph.consumed = True
    graph.nodes = []
    st = _tls()
    if st.default is graph:
        st.default = None


def unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (the inverse of numpy broadcasting)."""
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise ----------------------------------------------------------------

def _binary_shapes(a: Tensor, b: Tensor, kind: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{kind}: cannot broadcast {b.shape} against {a.shape}") from None


def elementwise(a, b, kind: str) -> Tensor:
    """``kind`` in {add, sub, mul, absdiff, div}; ``b`` may broadcast over ``a``."""
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = _as_tensor(a, b.dtype)
    else:
        a = _as_tensor(a)
        b = _as_tensor(b, a.dtype)
    _binary_shapes(a, b, kind)
    x, y = a.data, b.data
    dtype = np.result_type(x.dtype, y.dtype)
    if kind == "add":
        out = x + y
        fn = lambda g: (unbroadcast(g, x.shape), unbroadcast(g, y.shape))
    elif kind == "sub":
        out = x - y
        fn = lambda g: (unbroadcast(g, x.shape), unbroadcast(-g, y.shape))
    elif kind == "mul":
        out = x * y
        fn = lambda g: (unbroadcast(g * y, x.shape), unbroadcast(g * x, y.shape))
    elif kind == "absdiff":
        d = x - y
        out = np.abs(d)
        s = np.sign(d)
        fn = lambda g: (unbroadcast(g * s, x.shape), unbroadcast(-g * s, y.shape))
    elif kind == "div":
        with np.errstate(divide="ignore", invalid="ignore"):
            out = x / y
        fn = lambda g: (unbroadcast(g / y, x.shape), unbroadcast(-g * x / (y * y), y.shape))
    else:
        raise ValueError(f"unknown elementwise kind {kind!r}")
    return apply_op(out.astype(dtype, copy=False), (a, b), kind, fn)


def add(a, b):
    return elementwise(a, b, "add")


def sub(a, b):
    return elementwise(a, b, "sub")


def mul(a, b):
    return elementwise(a, b, "mul")


def div(a, b):
    return elementwise(a, b, "div")


def absdiff(a, b):
    return elementwise(a, b, "absdiff")


def _unary(x: Tensor, out: np.ndarray, kind: str, dfn) -> Tensor:
    return apply_op(out, (x,), kind, lambda g: (dfn(g),))


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        y = np.exp(x.data)
    return _unary(x, y, "exp", lambda g: g * y)


def log(x: Tensor) -> Tensor:
    xd = x.data
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(xd)
    return _unary(x, y, "log", lambda g: g / xd)


def sqrt(x: Tensor) -> Tensor:
    with np.errstate(invalid="ignore"):
        y = np.sqrt(x.data)
    return _unary(x, y, "sqrt", lambda g: g * 0.5 / y)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _unary(x, x.data * mask, "relu", lambda g: g * mask)


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    y = np.empty_like(xd)
    pos = xd >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    e = np.exp(xd[~pos])
    y[~pos] = e / (1.0 + e)
    return _unary(x, y, "sigmoid", lambda g: g * y * (1.0 - y))


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x: Tensor) -> Tensor:
    """tanh approximation of GELU."""
    xd = x.data
    inner = _GELU_C * (xd + 0.044715 * xd**3)
    t = np.tanh(inner)
    y = 0.5 * xd * (1.0 + t)

    def fn(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * xd**2)
        return g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * dinner)

    return _unary(x, y.astype(xd.dtype, copy=False), "gelu", fn)


def clamp_min(x: Tensor, lo: float) -> Tensor:
    mask = x.data > lo
    y = np.where(mask, x.data, np.asarray(lo, dtype=x.dtype))
    return _unary(x, y, "clamp_min", lambda g: g * mask)


# -- shape ops ------------------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    return _unary(x, x.data.reshape(shape), "reshape", lambda g: g.reshape(src))


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _unary(x, np.transpose(x.data, axes), "transpose", lambda g: np.transpose(g, inv))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise DimensionError(f"concat: {e}") from None
    bounds = np.cumsum(sizes)[:-1]

    def fn(g):
        return np.split(g, bounds, axis=axis)

    return apply_op(out, tensors, "concat", fn)


# -- reductions / normalizers -------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    out = []
    for a in axis:
        if not -ndim <= a < ndim:
            raise DimensionError(f"axis {a} out of range for {ndim}-d tensor")
        out.append(a % ndim)
    return tuple(sorted(out))


def reduce(x: Tensor, axis=None, kind: str = "sum", keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    if kind == "sum":
        out = x.data.sum(axis=axes, keepdims=keepdims)
        scale = 1.0
    elif kind == "mean":
        out = x.data.sum(axis=axes, keepdims=keepdims) / count
        scale = 1.0 / count
    else:
        raise ValueError(f"unknown reduction {kind!r}")
    shape = x.shape

    def fn(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g * scale, shape).astype(x.dtype),)

    return apply_op(np.asarray(out, dtype=x.dtype), (x,), kind, fn)


def l2norm(x: Tensor, axis) -> Tensor:
    """Euclidean norm over ``axis``; the subgradient at a zero vector is 0."""
    axes = _norm_axes(axis, x.ndim)
    xd = x.data
    n = np.sqrt((xd * xd).sum(axis=axes))

    def fn(g):
        nk = np.expand_dims(n, axes)
        safe = np.where(nk > 0, nk, 1.0)
        return (np.where(nk > 0, np.expand_dims(g, axes) * xd / safe, 0.0).astype(xd.dtype),)

    return apply_op(n.astype(xd.dtype, copy=False), (x,), "l2norm", fn)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    (axis,) = _norm_axes(axis, x.ndim)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    return _unary(x, y, "softmax", lambda g: y * (g - (g * y).sum(axis=axis, keepdims=True)))


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    (axis,) = _norm_axes(axis, x.ndim)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    p = np.exp(y)
    return _unary(x, y, "log_softmax", lambda g: g - p * g.sum(axis=axis, keepdims=True))


def layernorm_channels(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize an N x C x H x W map over C at every position."""
    xd = x.data
    C = xd.shape[1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise DimensionError(f"layernorm: gain/bias must have shape ({C},)")
    mu = xd.mean(axis=1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    bshape = (1, C) + (1,) * (xd.ndim - 2)
    y = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)
    red = (0,) + tuple(range(2, xd.ndim))

    def fn(g):
        gx_hat = g * gamma.data.reshape(bshape)
        gx = inv * (gx_hat - gx_hat.mean(axis=1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=1, keepdims=True))
        return gx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return apply_op(y.astype(xd.dtype, copy=False), (x, gamma, beta), "layernorm", fn)


# -- linear algebra -------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes with broadcast batch dims."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul operands must be at least 2-d")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul batch dims differ: {a.shape} @ {b.shape}") from None
    x, y = a.data, b.data
    out = np.matmul(x, y)

    def fn(g):
        ga = np.matmul(g, np.swapaxes(y, -1, -2))
        gb = np.matmul(np.swapaxes(x, -1, -2), g)
        return unbroadcast(ga, x.shape), unbroadcast(gb, y.shape)

    return apply_op(out, (a, b), "matmul", fn)


def channel_linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Per-position linear map over the channel axis of an N x Cin x H x W map.

    ``weight`` is (Cin, Cout), so at every position y = x W + b.
    """
    xd, w = x.data, weight.data
    N, Cin = xd.shape[:2]
    spatial = xd.shape[2:]
    if w.ndim != 2 or w.shape[0] != Cin:
        raise DimensionError(f"channel_linear: weight {w.shape} does not accept {Cin} channels")
    Cout = w.shape[1]
    x3 = xd.reshape(N, Cin, -1)
    y = np.matmul(w.T, x3)
    if bias is not None:
        y = y + bias.data[None, :, None]
    y = y.reshape((N, Cout) + spatial)

    def fn(g):
        g3 = g.reshape(N, Cout, -1)
        gx = np.matmul(w, g3).reshape(xd.shape)
        gw = np.tensordot(x3, g3, axes=([0, 2], [0, 2]))
        gb = g3.sum(axis=(0, 2)) if bias is not None else None
        return (gx, gw, gb) if bias is not None else (gx, gw)

    inputs = (x, weight, bias) if bias is not None else (x, weight)
    return apply_op(y, inputs, "channel_linear", fn)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           pad: int = 0, groups: int = 1) -> Tensor:
    """Zero-padded 2-d cross-correlation; ``weight`` is (Cout, Cin/groups, k, k)."""
    xd, w = x.data, weight.data
    if xd.ndim != 4 or w.ndim != 4:
        raise DimensionError("conv2d expects 4-d input and weight")
    N, Cin, H, W = xd.shape
    Cout, cpg, k, k2 = w.shape
    if k != k2 or k % 2 == 0:
        raise DimensionError(f"conv2d needs a square odd kernel, got {k}x{k2}")
    if groups < 1 or Cin % groups or Cout % groups or cpg * groups != Cin:
        raise DimensionError(f"conv2d: invalid groups={groups} for Cin={Cin}, weight {w.shape}")
    Ho, Wo = (H + 2 * pad - k) // stride + 1, (W + 2 * pad - k) // stride + 1
    if Ho < 1 or Wo < 1:
        raise DimensionError("conv2d: kernel larger than padded input")
    depthwise = groups == Cin and Cout == Cin

    if depthwise:
        w3 = np.ascontiguousarray(w[:, 0])
        y = kernels.dwconv_forward(xd, w3, stride, pad)
        cols = None
    else:
        cog = Cout // groups
        cols = [kernels.im2col(np.ascontiguousarray(xd[:, gi * cpg:(gi + 1) * cpg]), k, stride, pad)
                for gi in range(groups)]
        y = np.concatenate(
            [np.matmul(w[gi * cog:(gi + 1) * cog].reshape(cog, -1), cols[gi]) for gi in range(groups)],
            axis=1,
        ).reshape(N, Cout, Ho, Wo)
    if bias is not None:
        y = y + bias.data[None, :, None, None]

    def fn(g):
        g = np.ascontiguousarray(g)
        if depthwise:
            gx, gw3 = kernels.dwconv_backward(xd, w3, g, stride, pad)
            gw = gw3[:, None]
        else:
            cog = Cout // groups
            g3 = g.reshape(N, Cout, Ho * Wo)
            gxs, gws = [], []
            for gi in range(groups):
                gg = g3[:, gi * cog:(gi + 1) * cog]
                wg = w[gi * cog:(gi + 1) * cog].reshape(cog, -1)
                gws.append(np.tensordot(gg, cols[gi], axes=([0, 2], [0, 2])).reshape(cog, cpg, k, k))
                gxs.append(kernels.col2im(np.matmul(wg.T, gg), cpg, H, W, k, stride, pad))
            gx = np.concatenate(gxs, axis=1)
            gw = np.concatenate(gws, axis=0)
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    inputs = (x, weight, bias) if bias is not None else (x, weight)
    return apply_op(y.astype(xd.dtype, copy=False), inputs, "conv2d", fn)


# -- resampling ---------------------------------------------------------------

def pool_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row i averages the half-open window [floor(i*n_in/n_out), ceil((i+1)*n_in/n_out))."""
    P = np.zeros((n_out, n_in))
    for i in range(n_out):
        lo = (i * n_in) // n_out
        hi = -((-(i + 1) * n_in) // n_out)
        P[i, lo:hi] = 1.0 / (hi - lo)
    return P


def interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Align-corners=false linear interpolation weights, shape (n_out, n_in)."""
    A = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        src = max((i + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(np.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        lam = src - i0
        A[i, i0] += 1.0 - lam
        A[i, i1] += lam
    return A


def _separable(x: Tensor, Ah: np.ndarray, Aw: np.ndarray, kind: str) -> Tensor:
    Ah = Ah.astype(x.dtype)
    AwT = Aw.T.astype(x.dtype)
    y = np.matmul(np.matmul(Ah, x.data), AwT)
    return _unary(x, y, kind, lambda g: np.matmul(np.matmul(Ah.T, g), AwT.T))


def adaptive_avg_pool(x: Tensor, out_h: int, out_w: int) -> Tensor:
    H, W = x.shape[-2:]
    if out_h > H or out_w > W or out_h < 1 or out_w < 1:
        raise DimensionError(f"adaptive_avg_pool: cannot pool {H}x{W} to {out_h}x{out_w}")
    if (out_h, out_w) == (H, W):
        return _unary(x, x.data.copy(), "adaptive_avg_pool", lambda g: g)
    return _separable(x, pool_matrix(H, out_h), pool_matrix(W, out_w), "adaptive_avg_pool")


def bilinear_upsample(x: Tensor, out_h: int, out_w: int) -> Tensor:
    h, w = x.shape[-2:]
    if out_h < h or out_w < w:
        raise DimensionError(f"bilinear_upsample: target {out_h}x{out_w} smaller than {h}x{w}")
    if (out_h, out_w) == (h, w):
        return _unary(x, x.data.copy(), "bilinear_upsample", lambda g: g)
    return _separable(x, interp_matrix(h, out_h), interp_matrix(w, out_w), "bilinear_upsample")


# -- gradient checking --------------------------------------------------------

@dataclass
class GradcheckReport:
    max_rel_err: float
    passed: bool
    n_checked: int
    worst: tuple | None = None


def _scalarize(out: Tensor, proj: np.ndarray | None) -> Tensor:
    if out.size == 1:
        return out if out.ndim == 0 else reshape(out, ())
    return reduce(mul(out, Tensor(proj)), None, "sum")


def gradcheck(f: Callable[..., Tensor], inputs: Sequence[Tensor], h: float = 1e-5, tol: float = 1e-4,
              seed: int = 0, max_coords: int | None = None) -> GradcheckReport:
    """Compare analytic gradients of ``f`` with central differences.

    Non-scalar outputs are contracted with a fixed random projection. The
    relative error per coordinate is ``|a - n| / max(1, |a|, |n|)``.
    ``max_coords`` caps the number of probed coordinates per input.
    """
    rng = np.random.default_rng(seed)
    inputs = list(inputs)
    for t in inputs:
        t.grad = None
    with Graph():
        out = f(*inputs)
        proj = None if out.size == 1 else rng.standard_normal(out.shape).astype(out.dtype)
        loss = _scalarize(out, proj)
        backward(loss)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    def evaluate() -> float:
        with no_grad():
            return float(_scalarize(f(*inputs), proj).data)

    worst, worst_at, n = 0.0, None, 0
    for idx, t in enumerate(inputs):
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        a_flat = analytic[idx].reshape(-1)
        for j in coords:
            orig = flat[j]
            flat[j] = orig + h
            fp = evaluate()
            flat[j] = orig - h
            fm = evaluate()
            flat[j] = orig
            num = (fp - fm) / (2 * h)
            a = float(a_flat[j])
            err = abs(a - num) / max(1.0, abs(a), abs(num))
            n += 1
            if err > worst:
                worst, worst_at = err, (idx, int(j), a, num)
    return GradcheckReport(worst, worst < tol, n, worst_at)

