"""Adam with bias correction and the step-decay learning-rate schedule."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from dynsal.errors import DimensionError, NumericalError
from dynsal.tensor import Tensor


@dataclass
class OptimState:
    """Adam moments per parameter name.

    ``step`` counts ``adam_step`` calls; ``counts`` holds the number of
    updates each parameter has received, which drives its bias correction
    (parameters excluded from a step keep their moments and count).
    """

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first: dict[str, np.ndarray] = field(default_factory=dict)
    second: dict[str, np.ndarray] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: Mapping[str, Tensor], **constants: float) -> "OptimState":
        state = cls(**constants)
        for name, p in params.items():
            state.first[name] = np.zeros_like(p.data)
            state.second[name] = np.zeros_like(p.data)
            state.counts[name] = 0
        return state


def adam_step(
    params: Mapping[str, Tensor],
    grads: Optional[Mapping[str, np.ndarray]],
    state: OptimState,
    lr: float,
) -> None:
    """Update ``params`` in place. ``grads`` defaults to each ``param.grad``.

    Every gradient is checked before any parameter changes, so a non-finite
    gradient leaves params and state untouched.
    """
    if grads is None:
        grads = {name: p.grad for name, p in params.items()}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            raise DimensionError(f"no gradient for parameter {name}")
        if g.shape != p.shape:
            raise DimensionError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in parameter {name}")
        if name not in state.first:
            state.first[name] = np.zeros_like(p.data)
            state.second[name] = np.zeros_like(p.data)
            state.counts[name] = 0

    state.step += 1
    for name, p in params.items():
        g = grads[name]
        state.counts[name] += 1
        t = state.counts[name]
        m = state.first[name] = state.beta1 * state.first[name] + (1.0 - state.beta1) * g
        v = state.second[name] = state.beta2 * state.second[name] + (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


def lr_at(epoch: int, base_lr: float = 1e-4, decay_factor: float = 10.0, decay_every: int = 2) -> float:
    """``base_lr / decay_factor ** (epoch // decay_every)``."""
    return base_lr / decay_factor ** (epoch // decay_every)
