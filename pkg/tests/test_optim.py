import math

import numpy as np
import pytest

from tuni.errors import ContractError, DimensionError
from tuni.layers import Linear, ParamRegistry
from tuni.optim import AdamW, AdamWState, adamw_step, poly_lr


def scalar_adamw(w, grads, lr, b1=0.9, b2=0.999, eps=1e-8, wd=0.0):
    """One weight, plain floats, written from the update rule."""
    m = v = 0.0
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w = w * (1 - lr * wd)
        w = w - lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
    return w


def test_zero_gradient_is_pure_decay():
    p = {"w": np.array([2.0, -4.0])}
    adamw_step(p, {"w": np.zeros(2)}, AdamWState(), lr=0.1, weight_decay=0.5)
    np.testing.assert_allclose(p["w"], [2.0 * 0.95, -4.0 * 0.95])


def test_first_step_is_signed_lr():
    p = {"w": np.array([1.0, 1.0, 1.0])}
    g = np.array([3.0, -0.2, 0.0])
    adamw_step(p, {"w": g}, AdamWState(), lr=0.01)
    np.testing.assert_allclose(p["w"], 1 - 0.01 * g / (np.abs(g) + 1e-8), rtol=1e-12)


def test_matches_scalar_loop(rng):
    grads = rng.standard_normal((25, 4))
    w0 = rng.standard_normal(4)
    p = {"w": w0.copy()}
    st = AdamWState()
    for g in grads:
        adamw_step(p, {"w": g}, st, lr=0.05, weight_decay=0.1)
    ref = [scalar_adamw(w0[i], grads[:, i], 0.05, wd=0.1) for i in range(4)]
    np.testing.assert_allclose(p["w"], ref, rtol=1e-12)
    assert st.step == 25


def test_missing_grad_and_shape_error():
    p = {"a": np.ones(2), "b": np.ones(2)}
    adamw_step(p, {"a": np.ones(2)}, AdamWState(), lr=0.1, weight_decay=0.0)
    np.testing.assert_array_equal(p["b"], 1.0)
    with pytest.raises(DimensionError):
        adamw_step(p, {"a": np.ones(3)}, AdamWState(), lr=0.1)


def test_optimizer_is_deterministic(rng):
    def run():
        lin = Linear(3, 2)
        reg = ParamRegistry.from_module(lin)
        for _, t in reg.items():
            t.data[...] = 0.5
        opt = AdamW(reg, lr=0.01)
        r = np.random.default_rng(0)
        for _ in range(5):
            for _, t in reg.items():
                t.grad = r.standard_normal(t.shape).astype(np.float32)
            opt.step()
        return [t.data.tobytes() for _, t in reg.items()]

    assert run() == run()


def test_poly_lr_values():
    assert poly_lr(1.0, 0, 100) == 1.0
    assert poly_lr(1.0, 50, 100) == pytest.approx(0.5**0.9) == pytest.approx(0.53589, abs=1e-5)
    assert poly_lr(2e-3, 99, 100, power=1.0) == pytest.approx(2e-5)
    assert poly_lr(1.0, 100, 100) == 0.0 and poly_lr(1.0, 150, 100) == 0.0
    lrs = [poly_lr(1.0, i, 20) for i in range(21)]
    assert all(a > b for a, b in zip(lrs, lrs[1:-1]))
    with pytest.raises(ContractError):
        poly_lr(1.0, -1, 10)
    with pytest.raises(ContractError):
        poly_lr(1.0, 0, 0)
