"""Update-rule oracles: hand-computed steps, reductions, and invariants."""

import numpy as np
import pytest

from invlab.autodiff import NonFiniteError, Tensor
from invlab.optimizers import (OptimizerConfig, OptimizerState, adam_step,
                               adamw_step, apply_step, clip_grad_norm, gd_step)


def _param(value, grad=None):
    p = Tensor(np.asarray(value, dtype=np.float64), requires_grad=True)
    if grad is not None:
        p.grad = np.asarray(grad, dtype=np.float64)
    return p


class TestConfigValidation:
    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            OptimizerConfig(kind="sgd")
        with pytest.raises(ValueError):
            OptimizerConfig(learning_rate=0.0)
        with pytest.raises(ValueError):
            OptimizerConfig(beta1=1.0)
        with pytest.raises(ValueError):
            OptimizerConfig(epsilon=0.0)
        with pytest.raises(ValueError):
            OptimizerConfig(weight_decay=-0.1)


class TestGradientDescent:
    def test_hand_computed_quadratic_step(self):
        # J = x^2 at x=1: dJ/dx = 2, eta=0.1 -> x = 0.8
        x = _param(1.0)
        (x * x).sum().backward()
        gd_step({"x": x}, OptimizerConfig(kind="gd", learning_rate=0.1))
        np.testing.assert_allclose(x.data, 0.8, atol=1e-15)

    def test_zero_gradient_leaves_params(self):
        x = _param([1.0, -2.0], grad=[0.0, 0.0])
        gd_step({"x": x}, OptimizerConfig(kind="gd", learning_rate=0.5))
        np.testing.assert_array_equal(x.data, [1.0, -2.0])

    def test_tiny_rate_barely_moves(self):
        # eta -> 0 limit: update magnitude scales linearly with eta
        x = _param([1.0], grad=[123.0])
        gd_step({"x": x}, OptimizerConfig(kind="gd", learning_rate=1e-300))
        np.testing.assert_allclose(x.data, [1.0], atol=1e-290)

    def test_vectorized_equals_componentwise_loop(self, rng):
        x0 = rng.standard_normal(9)
        g = rng.standard_normal(9)
        eta = 0.3
        x = _param(x0.copy(), grad=g)
        gd_step({"x": x}, OptimizerConfig(kind="gd", learning_rate=eta))
        looped = np.array([x0[i] - eta * g[i] for i in range(9)])
        np.testing.assert_array_equal(x.data, looped)

    def test_missing_and_nonfinite_grads_error(self):
        cfg = OptimizerConfig(kind="gd", learning_rate=0.1)
        with pytest.raises(ValueError):
            gd_step({"x": _param(1.0)}, cfg)
        with pytest.raises(NonFiniteError):
            gd_step({"x": _param(1.0, grad=np.inf)}, cfg)

    def test_converges_on_convex_quadratic(self, rng):
        # J(x) = ||x - c||^2 with eta=0.1 contracts by 0.8 per step
        c = rng.uniform(-3, 3, 5)
        x = _param(c + rng.uniform(-10, 10, 5) * (5 ** -0.5))
        cfg = OptimizerConfig(kind="gd", learning_rate=0.1)
        for _ in range(200):
            diff = x - Tensor(c)
            (diff * diff).sum().backward()
            gd_step({"x": x}, cfg)
            x.zero_grad()
        assert np.linalg.norm(x.data - c) < 1e-6


class TestAdam:
    def test_first_step_hand_computation(self):
        # unit gradient, defaults: m_hat = v_hat = 1 -> x ~= -eta/(1+eps)
        x = _param(0.0, grad=1.0)
        state = OptimizerState.for_params({"x": x})
        adam_step({"x": x}, OptimizerConfig(kind="adam", learning_rate=0.1), state)
        assert abs(x.item() - (-0.1)) < 1e-8
        assert state.step == 1

    def test_first_step_magnitude_formula(self):
        x = _param(0.0, grad=1.0)
        eps = 1e-8
        cfg = OptimizerConfig(kind="adam", learning_rate=0.1, epsilon=eps)
        adam_step({"x": x}, cfg, OptimizerState.for_params({"x": x}))
        assert abs(abs(x.item()) - 0.1 / (1.0 + eps)) < 1e-9

    def test_zero_gradient_fixed_point(self):
        x = _param([2.0, -1.0], grad=[0.0, 0.0])
        state = OptimizerState.for_params({"x": x})
        adam_step({"x": x}, OptimizerConfig(kind="adam", learning_rate=0.1), state)
        np.testing.assert_array_equal(x.data, [2.0, -1.0])

    def test_first_step_scale_invariance(self):
        # gradients g and 1000g produce near-identical first updates
        updates = []
        for scale in (1.0, 1000.0):
            x = _param(0.0, grad=0.37 * scale)
            adam_step({"x": x}, OptimizerConfig(kind="adam", learning_rate=0.1),
                      OptimizerState.for_params({"x": x}))
            updates.append(x.item())
        assert abs(updates[0] - updates[1]) < 1e-6

    def test_mismatched_state_rejected(self):
        x = _param([1.0, 2.0, 3.0], grad=[0.1, 0.1, 0.1])
        state = OptimizerState.for_params({"x": _param([1.0, 2.0])})
        with pytest.raises(ValueError, match="optimizer state"):
            adam_step({"x": x}, OptimizerConfig(kind="adam", learning_rate=0.1),
                      state)
        with pytest.raises(ValueError, match="optimizer state"):
            adam_step({"x": x}, OptimizerConfig(kind="adam", learning_rate=0.1),
                      OptimizerState())

    def test_state_counter_and_moments(self, rng):
        x = _param(rng.standard_normal(4))
        state = OptimizerState.for_params({"x": x})
        cfg = OptimizerConfig(kind="adam", learning_rate=0.01)
        for k in range(5):
            x.grad = rng.standard_normal(4)
            adam_step({"x": x}, cfg, state)
            assert state.step == k + 1
            assert np.all(state.v["x"] >= 0.0)


class TestAdamW:
    def test_lambda_zero_is_bitwise_adam(self, rng):
        xa = _param(rng.standard_normal(6))
        xw = _param(xa.data.copy())
        sa = OptimizerState.for_params({"x": xa})
        sw = OptimizerState.for_params({"x": xw})
        adam_cfg = OptimizerConfig(kind="adam", learning_rate=0.05)
        adamw_cfg = OptimizerConfig(kind="adamw", learning_rate=0.05, weight_decay=0.0)
        for _ in range(100):
            g = rng.standard_normal(6)
            xa.grad = g.copy()
            xw.grad = g.copy()
            adam_step({"x": xa}, adam_cfg, sa)
            adamw_step({"x": xw}, adamw_cfg, sw)
        assert np.array_equal(xa.data, xw.data)
        assert np.array_equal(sa.m["x"], sw.m["x"])

    def test_pure_decay_hand_computation(self):
        # zero gradient, zero state: x <- x - eta*lambda*x = 0.99
        x = _param(1.0, grad=0.0)
        cfg = OptimizerConfig(kind="adamw", learning_rate=0.1, weight_decay=0.1)
        adamw_step({"x": x}, cfg, OptimizerState.for_params({"x": x}))
        np.testing.assert_allclose(x.item(), 0.99, atol=1e-15)

    def test_origin_is_fixed_point(self):
        x = _param(0.0, grad=0.0)
        cfg = OptimizerConfig(kind="adamw", learning_rate=0.1, weight_decay=0.5)
        adamw_step({"x": x}, cfg, OptimizerState.for_params({"x": x}))
        assert x.item() == 0.0


class TestClippingAndDispatch:
    def test_clip_rescales_to_max_norm(self):
        grads = {"a": np.array([3.0]), "b": np.array([4.0])}
        clipped = clip_grad_norm(grads, 1.0)
        total = np.sqrt(sum(float(np.sum(g * g)) for g in clipped.values()))
        np.testing.assert_allclose(total, 1.0)

    def test_clip_leaves_small_gradients(self):
        grads = {"a": np.array([0.3])}
        assert clip_grad_norm(grads, 1.0)["a"][0] == 0.3

    def test_apply_step_dispatch_advances_counter(self):
        for kind in ("gd", "adam", "adamw"):
            x = _param(1.0, grad=0.5)
            state = OptimizerState.for_params({"x": x})
            apply_step({"x": x}, OptimizerConfig(kind=kind, learning_rate=0.1), state)
            assert state.step == 1

    def test_two_param_groups_share_one_state(self, rng):
        params = {"tokens": _param(rng.standard_normal((3, 4))),
                  "pooled": _param(rng.standard_normal(5))}
        for p in params.values():
            p.grad = np.ones(p.shape)
        state = OptimizerState.for_params(params)
        adam_step(params, OptimizerConfig(kind="adam", learning_rate=0.1), state)
        assert state.step == 1 and set(state.m) == {"tokens", "pooled"}
