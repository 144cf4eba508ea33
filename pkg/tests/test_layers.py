import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from tuni import autodiff as ad
from tuni.autodiff import Tensor
from tuni.errors import ContractError, DimensionError
from tuni.layers import (
    SE,
    Conv,
    DWConv,
    LayerNorm,
    LayerSpec,
    Linear,
    Module,
    ParamRegistry,
    Stem,
    init_params,
    layernorm_forward,
    linear_forward,
    se_forward,
    stem_forward,
    trunc_normal,
)


def T(x):
    return Tensor(np.asarray(x, np.float64))


def _f64(m):
    return m.astype(np.float64)


def test_linear_zero_weights_gives_bias(rng):
    lin = _f64(Linear(3, 5))
    lin.weight.data[...] = 0
    lin.bias.data[...] = np.arange(5)
    y = lin(T(rng.standard_normal((2, 3, 4, 4)))).data
    assert np.array_equal(y, np.broadcast_to(np.arange(5.0)[None, :, None, None], (2, 5, 4, 4)))


def test_linear_identity(rng):
    x = rng.standard_normal((2, 4, 3, 3))
    y = linear_forward(T(x), T(np.eye(4)), T(np.zeros(4))).data
    assert np.array_equal(y, x)


def test_linear_matches_matmul_oracle(rng):
    x, w, b = rng.standard_normal((2, 4, 3, 3)), rng.standard_normal((4, 6)), rng.standard_normal(6)
    y = linear_forward(T(x), T(w), T(b)).data
    ref = (x.transpose(0, 2, 3, 1) @ w + b).transpose(0, 3, 1, 2)
    np.testing.assert_allclose(y, ref, rtol=1e-13)
    x2 = rng.standard_normal((5, 4))
    np.testing.assert_allclose(linear_forward(T(x2), T(w), T(b)).data, x2 @ w + b, rtol=1e-13)


def test_linear_width_mismatch():
    with pytest.raises(DimensionError):
        Linear(3, 2)(Tensor(np.ones((1, 4, 2, 2), np.float32)))


def test_layernorm_cases(rng):
    g, b = T(np.ones(8)), T(np.zeros(8))
    assert not layernorm_forward(T(np.full((1, 8, 2, 2), 3.0)), g, b).data.any()
    z = rng.standard_normal((1, 8, 3, 3))
    z = (z - z.mean(1, keepdims=True)) / z.std(1, keepdims=True)
    np.testing.assert_allclose(layernorm_forward(T(z), g, b).data, z, atol=1e-5)
    x = rng.standard_normal((2, 8, 3, 3)) * 3 + 1
    gamma, beta = rng.standard_normal(8), rng.standard_normal(8)
    mu = x.mean(axis=1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=1, keepdims=True)
    ref = (x - mu) / np.sqrt(var + 1e-6) * gamma[None, :, None, None] + beta[None, :, None, None]
    np.testing.assert_allclose(layernorm_forward(T(x), T(gamma), T(beta)).data, ref, rtol=1e-6, atol=1e-12)
    y = layernorm_forward(T(x), g, b).data
    assert np.abs(y.mean(1)).max() < 1e-5 and np.abs(y.var(1) - 1).max() < 1e-3


def test_se_zero_input_and_oracle(rng):
    se = _f64(SE(8, 4))
    init_params(ParamRegistry.from_module(se), seed=0)
    np.testing.assert_allclose(se(T(np.zeros((2, 8)))).data, 0.5)
    for p in se.parameters():
        p.data = rng.standard_normal(p.shape)
    w = rng.standard_normal((3, 8))
    h = np.maximum(w @ se.fc1_weight.data + se.fc1_bias.data, 0)
    ref = 1 / (1 + np.exp(-(h @ se.fc2_weight.data + se.fc2_bias.data)))
    got = se_forward(T(w), se).data
    np.testing.assert_allclose(got, ref, rtol=1e-12)
    assert ((got > 0) & (got < 1)).all()


def test_se_hidden_floor():
    assert SE(3, 4).fc1_weight.shape == (3, 1)


def test_stem_shapes_and_contract(rng):
    stem = Stem(3, 16)
    y = stem_forward(Tensor(rng.random((1, 3, 64, 64)).astype(np.float32)), stem)
    assert y.shape == (1, 16, 16, 16)
    y2 = stem(Tensor(rng.random((2, 3, 36, 20)).astype(np.float32)))
    assert y2.shape == (2, 16, 9, 5)
    with pytest.raises(ContractError):
        stem(Tensor(np.zeros((1, 3, 30, 32), np.float32)))


def test_stem_zero_weights_gives_beta(rng):
    stem = _f64(Stem(3, 8))
    reg = ParamRegistry.from_module(stem)
    init_params(reg, seed=0)
    for name, t in reg.items():
        if not name.endswith(("gamma", "beta")):
            t.data[...] = 0
    y = stem(T(rng.random((1, 3, 8, 8)))).data
    assert not y.any()


def test_init_determinism_and_biases():
    a, b = ParamRegistry.from_module(Stem(3, 8)), ParamRegistry.from_module(Stem(3, 8))
    init_params(a, seed=7)
    init_params(b, seed=7)
    for name in a:
        assert np.array_equal(a[name].data, b[name].data)
        if name.endswith("bias") or name.endswith("beta"):
            assert not a[name].data.any()


def test_trunc_normal_statistics():
    x = trunc_normal(np.random.default_rng(0), (10_000,))
    assert np.abs(x).max() <= 0.04
    dist = stats.truncnorm(-2, 2, loc=0, scale=0.02)
    se_mean = dist.std() / np.sqrt(x.size)
    assert abs(x.mean()) < 3 * se_mean
    assert abs(x.std() - dist.std()) < 3 * dist.std() / np.sqrt(2 * x.size) * 1.5
    assert stats.kstest(x, dist.cdf).pvalue > 1e-3


class _Dup(Module):
    def __init__(self):
        super().__init__()
        self.a = Linear(2, 2)
        self.b = self.a


def test_registry_rejects_shared_tensor():
    with pytest.raises(ContractError):
        ParamRegistry.from_module(_Dup())


def test_layer_forward_is_deterministic(rng):
    dw = DWConv(4)
    init_params(ParamRegistry.from_module(dw), seed=3)
    x = Tensor(rng.standard_normal((1, 4, 5, 5)).astype(np.float32))
    assert np.array_equal(dw(x).data, dw(x).data)


@settings(max_examples=25, deadline=None)
@given(kind=st.sampled_from(["linear", "dwconv", "conv", "layernorm", "se"]),
       cin=st.integers(1, 24), cout=st.integers(1, 24), k=st.sampled_from([1, 3, 5]),
       r=st.integers(1, 8))
def test_param_count_matches_live_layer(kind, cin, cout, k, r):
    layer = {
        "linear": lambda: Linear(cin, cout),
        "dwconv": lambda: DWConv(cin, k),
        "conv": lambda: Conv(cin, cout, k),
        "layernorm": lambda: LayerNorm(cin),
        "se": lambda: SE(cin, r),
    }[kind]()
    live = ParamRegistry.from_module(layer).numel()
    assert layer.spec.param_count() == live


def test_linear_4_to_8_has_40_params():
    assert LayerSpec("linear", 4, 8).param_count() == 40
    assert ParamRegistry.from_module(Linear(4, 8)).numel() == 40


def test_float32_default_and_grad_flow(rng):
    lin = Linear(3, 2)
    assert lin.weight.dtype == np.float32
    x = Tensor(rng.standard_normal((4, 3)).astype(np.float32))
    with ad.Graph():
        ad.backward(ad.reduce(lin(x), None, "sum"))
    assert lin.weight.grad.shape == (3, 2) and lin.bias.grad.shape == (2,)
