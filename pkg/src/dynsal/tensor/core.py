"""Dense float64 tensors with reverse-mode gradients.

A ``Tensor`` wraps a channels-last ``numpy.ndarray``. Every differentiable
op in ``dynsal.tensor.ops`` returns a new tensor that remembers its parent
tensors and a closure mapping the output gradient to parent gradients.
``Tensor.backward`` orders the recorded graph with ``GradTape`` and replays
it from the loss back to the leaves.

There is no global tape: each loss owns its own graph, so different threads
can run forward/backward on different graphs at the same time. ``no_grad``
is thread-local.
"""
from __future__ import annotations

import logging
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from dynsal.errors import DimensionError

logger = logging.getLogger(__name__)

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Run ops without recording parents (inference, finite differences)."""
    previous = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = previous


class Tensor:
    """Row-major, channels-last real array with an optional gradient.

    ``grad`` is a same-shape float64 accumulator when ``requires_grad`` is
    set and ``None`` otherwise. Scalars are stored with shape ``(1,)``.
    """

    def __init__(
        self,
        data,
        *,
        requires_grad: bool = False,
        parents: tuple["Tensor", ...] = (),
        backward_fn: Optional[BackwardFn] = None,
        op: str = "leaf",
    ):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if arr.size == 0:
            raise DimensionError(f"tensor dimensions must be positive, got {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = np.zeros_like(arr) if requires_grad else None
        self._parents = parents
        self._backward = backward_fn
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single-element tensor, got {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def backward(self) -> None:
        """Accumulate d(self)/d(t) into ``t.grad`` for every tensor ``t`` that
        requires grad and feeds into ``self``."""
        if self.data.size != 1:
            raise DimensionError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise RuntimeError("loss was not produced from any tensor that requires grad")
        GradTape.of(self).replay(self)

    # Operator sugar; the ops module holds the implementations.
    def __add__(self, other: "Tensor") -> "Tensor":
        from dynsal.tensor import ops
        return ops.add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        from dynsal.tensor import ops
        return ops.sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        from dynsal.tensor import ops
        return ops.hadamard(self, other)

    def __truediv__(self, other: "Tensor") -> "Tensor":
        from dynsal.tensor import ops
        return ops.div(self, other)

    def __neg__(self) -> "Tensor":
        from dynsal.tensor import ops
        return ops.mul_scalar(self, -1.0)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"


def make_result(
    data: np.ndarray,
    parents: tuple[Tensor, ...],
    backward_fn: BackwardFn,
    op: str,
) -> Tensor:
    """Wrap an op output, recording the graph only when a parent needs grad."""
    needs_grad = grad_enabled() and any(p.requires_grad for p in parents)
    if not needs_grad:
        return Tensor(data, op=op)
    return Tensor(data, requires_grad=True, parents=parents, backward_fn=backward_fn, op=op)


@dataclass
class GradTape:
    """Topologically ordered nodes of one recorded graph.

    ``nodes`` lists every grad-requiring tensor reachable from the root,
    each one after all of its inputs. Replaying in reverse therefore visits
    a node only after every consumer has contributed its gradient.
    """

    nodes: list[Tensor]

    @classmethod
    def of(cls, root: Tensor) -> "GradTape":
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, children_done = stack.pop()
            if children_done:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        return cls(order)

    def replay(self, root: Tensor) -> None:
        pending: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
        for node in reversed(self.nodes):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            node.grad += g
            if node._backward is None:
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if pg.shape != parent.data.shape:
                    raise DimensionError(
                        f"{node.op} backward produced {pg.shape} for parent {parent.shape}"
                    )
                if id(parent) in pending:
                    pending[id(parent)] = pending[id(parent)] + pg
                else:
                    pending[id(parent)] = pg
        if pending:
            logger.debug("%d gradient contributions had no recorded node", len(pending))
