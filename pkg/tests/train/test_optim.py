"""Unit tests for src/dynsal/train/optim.py.

Run with: python -m pytest tests/train/test_optim.py -v
"""
from __future__ import annotations

import math

import numpy as np
import pytest

from dynsal.errors import DimensionError, NumericalError
from dynsal.tensor import Tensor
from dynsal.train import OptimState, adam_step, lr_at


class TestAdamStep:
    def test_first_step_moves_by_lr_against_the_gradient_sign(self, rng):
        w = Tensor(rng.normal(size=(3, 4)))
        start = w.data.copy()
        g = rng.uniform(0.1, 2.0, size=(3, 4)) * rng.choice([-1.0, 1.0], size=(3, 4))
        adam_step({"w": w}, {"w": g}, OptimState.for_params({"w": w}), lr=1e-3)
        np.testing.assert_allclose(w.data - start, -1e-3 * np.sign(g), atol=1e-3 * 1e-6)

    def test_zero_gradient_is_a_fixed_point(self):
        w = Tensor(np.array([1.0, -2.0]))
        state = OptimState.for_params({"w": w})
        for _ in range(3):
            adam_step({"w": w}, {"w": np.zeros(2)}, state, lr=0.1)
        np.testing.assert_array_equal(w.data, [1.0, -2.0])

    def test_three_steps_on_a_parabola(self):
        w = Tensor(np.array([1.0]))
        state = OptimState.for_params({"w": w})
        ref, m, v = 1.0, 0.0, 0.0
        for t in range(1, 4):
            g = 2.0 * w.data.copy()
            adam_step({"w": w}, {"w": g}, state, lr=0.01)
            g_ref = 2.0 * ref
            m = 0.9 * m + 0.1 * g_ref
            v = 0.999 * v + 0.001 * g_ref * g_ref
            ref -= 0.01 * (m / (1 - 0.9 ** t)) / (math.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
            assert abs(w.data[0] - ref) < 1e-10
        assert state.step == 3

    def test_gradients_default_to_param_grad(self):
        w = Tensor(np.array([0.5]), requires_grad=True)
        w.grad[...] = 4.0
        adam_step({"w": w}, None, OptimState.for_params({"w": w}), lr=0.1)
        assert w.data[0] == pytest.approx(0.4)

    def test_non_finite_gradient_changes_nothing(self):
        a, b = Tensor(np.array([1.0])), Tensor(np.array([2.0]))
        state = OptimState.for_params({"a": a, "b": b})
        with pytest.raises(NumericalError, match="b"):
            adam_step({"a": a, "b": b}, {"a": np.array([1.0]), "b": np.array([np.nan])}, state, lr=0.1)
        assert a.data[0] == 1.0 and b.data[0] == 2.0
        assert state.step == 0 and state.counts == {"a": 0, "b": 0}
        assert not state.first["a"].any()

    def test_shape_mismatch(self):
        w = Tensor(np.zeros(3))
        with pytest.raises(DimensionError):
            adam_step({"w": w}, {"w": np.zeros(2)}, OptimState(), lr=0.1)

    def test_missing_gradient(self):
        with pytest.raises(DimensionError):
            adam_step({"w": Tensor(np.zeros(3))}, {}, OptimState(), lr=0.1)

    def test_excluded_parameter_keeps_moments_and_count(self):
        a, b = Tensor(np.array([1.0])), Tensor(np.array([1.0]))
        state = OptimState.for_params({"a": a, "b": b})
        adam_step({"a": a, "b": b}, {"a": np.array([1.0]), "b": np.array([1.0])}, state, lr=0.1)
        before = (b.data.copy(), state.first["b"].copy(), state.second["b"].copy())
        adam_step({"a": a}, {"a": np.array([1.0])}, state, lr=0.1)
        assert state.counts == {"a": 2, "b": 1}
        assert state.step == 2
        for old, new in zip(before, (b.data, state.first["b"], state.second["b"])):
            np.testing.assert_array_equal(old, new)

    def test_unknown_parameter_gets_fresh_moments(self):
        w = Tensor(np.array([3.0]))
        state = OptimState()
        adam_step({"w": w}, {"w": np.array([1.0])}, state, lr=0.5)
        assert state.counts["w"] == 1
        assert w.data[0] == pytest.approx(2.5)


class TestSchedule:
    @pytest.mark.parametrize("epoch, expected", [
        (0, 1e-4), (1, 1e-4), (2, 1e-5), (3, 1e-5), (4, 1e-6),
        (5, 1e-6), (6, 1e-7), (7, 1e-7), (8, 1e-8), (9, 1e-8),
    ])
    def test_step_decay(self, epoch, expected):
        assert lr_at(epoch) == pytest.approx(expected, rel=1e-12)

    def test_custom_decay(self):
        assert lr_at(3, base_lr=1.0, decay_factor=2.0, decay_every=1) == 0.125
