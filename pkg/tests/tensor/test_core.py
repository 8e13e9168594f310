"""Unit tests for src/dynsal/tensor/core.py.

Run with: python -m pytest tests/tensor/test_core.py -v
"""
from __future__ import annotations

import threading

import numpy as np
import pytest

from dynsal.errors import DimensionError
from dynsal.tensor import GradTape, Tensor, add, grad_enabled, hadamard, no_grad, total
from dynsal.tensor.ops import add_scalar, mul_scalar


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------

class TestTensor:
    def test_scalar_is_stored_with_shape_one(self):
        t = Tensor(3.5)
        assert t.shape == (1,)
        assert t.item() == 3.5

    def test_data_is_float64(self):
        assert Tensor(np.arange(4, dtype=np.int32)).data.dtype == np.float64

    def test_empty_dimension_rejected(self):
        with pytest.raises(DimensionError):
            Tensor(np.zeros((0, 3)))

    def test_grad_only_when_required(self):
        assert Tensor([1.0, 2.0]).grad is None
        assert np.array_equal(Tensor([1.0, 2.0], requires_grad=True).grad, [0.0, 0.0])

    def test_item_needs_single_element(self):
        with pytest.raises(DimensionError):
            Tensor([1.0, 2.0]).item()

    def test_detach_copies_without_grad(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        d = x.detach()
        d.data[0] = 9.0
        assert x.data[0] == 1.0
        assert not d.requires_grad


# ---------------------------------------------------------------------------
# Backward
# ---------------------------------------------------------------------------

class TestBackward:
    def test_reused_tensor_accumulates_both_paths(self):
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        total(add(hadamard(x, x), x)).backward()
        np.testing.assert_allclose(x.grad, 2 * x.data + 1)

    def test_repeated_backward_accumulates(self):
        x = Tensor([2.0], requires_grad=True)
        mul_scalar(x, 3.0).backward()
        mul_scalar(x, 3.0).backward()
        assert x.grad[0] == 6.0

    def test_zero_grad_resets(self):
        x = Tensor([2.0], requires_grad=True)
        mul_scalar(x, 3.0).backward()
        x.zero_grad()
        assert x.grad[0] == 0.0

    def test_non_scalar_loss_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(DimensionError):
            mul_scalar(x, 2.0).backward()

    def test_constant_loss_rejected(self):
        with pytest.raises(RuntimeError):
            total(Tensor([1.0, 2.0])).backward()

    def test_deep_chain_does_not_recurse(self):
        x = Tensor([0.0], requires_grad=True)
        y = x
        for _ in range(5000):
            y = add_scalar(y, 1.0)
        y.backward()
        assert y.item() == 5000.0
        assert x.grad[0] == 1.0

    def test_constants_receive_no_gradient(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        c = Tensor([3.0, 4.0])
        total(hadamard(x, c)).backward()
        assert c.grad is None
        np.testing.assert_array_equal(x.grad, [3.0, 4.0])


class TestGradTape:
    def test_nodes_follow_their_inputs(self):
        x = Tensor([1.0], requires_grad=True)
        a = mul_scalar(x, 2.0)
        b = add(a, x)
        loss = hadamard(b, a)
        order = GradTape.of(loss).nodes
        position = {id(n): i for i, n in enumerate(order)}
        for node in order:
            for parent in node._parents:
                if parent.requires_grad:
                    assert position[id(parent)] < position[id(node)]
        assert order[-1] is loss

    def test_each_node_listed_once(self):
        x = Tensor([1.0], requires_grad=True)
        a = add(x, x)
        order = GradTape.of(add(a, a)).nodes
        assert len(order) == len({id(n) for n in order}) == 3


# ---------------------------------------------------------------------------
# no_grad
# ---------------------------------------------------------------------------

class TestNoGrad:
    def test_results_are_constants(self):
        x = Tensor([1.0], requires_grad=True)
        with no_grad():
            y = mul_scalar(x, 2.0)
        assert not y.requires_grad
        assert y.is_leaf

    def test_restores_previous_state(self):
        with no_grad():
            with no_grad():
                pass
            assert not grad_enabled()
        assert grad_enabled()

    def test_is_thread_local(self):
        seen = []
        with no_grad():
            worker = threading.Thread(target=lambda: seen.append(grad_enabled()))
            worker.start()
            worker.join()
        assert seen == [True]
