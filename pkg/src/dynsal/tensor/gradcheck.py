"""Central finite-difference checks of recorded gradients."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Optional

import numpy as np

from dynsal.tensor.core import Tensor, no_grad

DEFAULT_STEP = 1e-5
DEFAULT_TOLERANCE = 1e-4


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    """|a - n| / max(|a|, |n|, floor); the floor keeps near-zero gradients
    from amplifying finite-difference noise."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


@dataclass(frozen=True)
class GradCheckResult:
    name: str
    index: tuple[int, ...]
    analytic: float
    numeric: float
    rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.rel_error < self.tolerance

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "index": list(self.index),
            "analytic": self.analytic,
            "numeric": self.numeric,
            "rel_error": self.rel_error,
        }


def _indices(shape: tuple[int, ...], max_entries: Optional[int], rng: np.random.Generator) -> Iterable[tuple[int, ...]]:
    total = int(np.prod(shape))
    if max_entries is None or total <= max_entries:
        flat = range(total)
    else:
        flat = sorted(rng.choice(total, size=max_entries, replace=False).tolist())
    return [tuple(int(i) for i in np.unravel_index(f, shape)) for f in flat]


def gradcheck(
    loss_fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    *,
    step: float = DEFAULT_STEP,
    tolerance: float = DEFAULT_TOLERANCE,
    max_entries: Optional[int] = None,
    seed: int = 0,
    floor: float = 1e-6,
) -> list[GradCheckResult]:
    """Compare ``backward()`` gradients of ``loss_fn()`` against central
    differences for every (or ``max_entries`` sampled) entry of each param.

    ``loss_fn`` must rebuild the graph from the current ``param.data``.
    """
    for p in params.values():
        p.zero_grad()
    loss_fn().backward()
    analytic = {name: p.grad.copy() for name, p in params.items()}

    rng = np.random.default_rng(seed)
    results: list[GradCheckResult] = []
    for name, p in params.items():
        for idx in _indices(p.shape, max_entries, rng):
            original = p.data[idx]
            with no_grad():
                p.data[idx] = original + step
                plus = loss_fn().item()
                p.data[idx] = original - step
                minus = loss_fn().item()
            p.data[idx] = original
            numeric = (plus - minus) / (2.0 * step)
            a = float(analytic[name][idx])
            results.append(
                GradCheckResult(name, idx, a, numeric, relative_error(a, numeric, floor), tolerance)
            )
    return results
