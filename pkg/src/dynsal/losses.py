"""Composite saliency objective ``L = KL + a1*CC + a2*NSS`` and its sums.

Predictions are differentiable ``Tensor`` maps of shape ``[h, w]`` or
``[h, w, 1]``; targets (the continuous map Q and the fixation map P) are
constants and may be given as arrays or tensors. Standard deviations are
population ones; a map whose deviation is below ``eps`` is degenerate.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from dynsal.errors import ConfigurationError, DataError, DegenerateMapError, DimensionError, NoFixationError
from dynsal.tensor import Tensor, add, div, hadamard, log, mean, reshape, sqrt, sub, total
from dynsal.tensor.ops import add_scalar, clamp_min, mul_scalar

MapLike = Union[Tensor, np.ndarray]

DEFAULT_EPS = 1e-8
DEFAULT_ALPHA = 0.1


@dataclass(frozen=True)
class LossWeights:
    alpha_cc: float = DEFAULT_ALPHA
    alpha_nss: float = DEFAULT_ALPHA
    eps: float = DEFAULT_EPS

    def __post_init__(self) -> None:
        if self.alpha_cc < 0 or self.alpha_nss < 0:
            raise ConfigurationError(f"loss weights must be >= 0, got {self.alpha_cc}, {self.alpha_nss}")
        if self.eps <= 0:
            raise ConfigurationError(f"eps must be > 0, got {self.eps}")


def _prediction(y: Tensor, what: str) -> Tensor:
    if y.ndim == 3 and y.shape[2] == 1:
        return reshape(y, y.shape[:2])
    if y.ndim != 2:
        raise DimensionError(f"{what} expects an [h, w] map, got {y.shape}")
    return y


def _target(x: MapLike, shape: tuple[int, ...], what: str) -> np.ndarray:
    arr = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    if arr.shape != shape:
        raise DimensionError(f"{what}: target {arr.shape} does not match prediction {shape}")
    return arr


def _std(centered: Tensor) -> Tensor:
    return sqrt(mean(hadamard(centered, centered)))


def kl_div(Y: Tensor, Q: MapLike, eps: float = DEFAULT_EPS) -> Tensor:
    """KL(Q || Y) after adding ``eps`` to every cell and normalizing both to unit sum."""
    y = _prediction(Y, "kl_div")
    q = _target(Q, y.shape, "kl_div")
    if np.any(q < 0) or q.sum() <= 0:
        raise DegenerateMapError("kl_div: ground-truth map has no mass")
    if np.any(y.data < 0):
        raise DataError("kl_div: prediction has negative values")
    q = q + eps
    q = q / q.sum()
    y_eps = add_scalar(y, eps)
    y_hat = div(y_eps, total(y_eps))
    entropy = float(np.sum(q * np.log(q)))
    cross = total(hadamard(log(y_hat), Tensor(q)))
    return add_scalar(mul_scalar(cross, -1.0), entropy)


def cc_loss(Y: Tensor, Q: MapLike, eps: float = DEFAULT_EPS) -> Tensor:
    """Negative Pearson correlation, ``-cov(Y, Q) / (std(Y) std(Q))``."""
    y = _prediction(Y, "cc_loss")
    q = _target(Q, y.shape, "cc_loss")
    qc = q - q.mean()
    sq = float(np.sqrt(np.mean(qc * qc)))
    if sq < eps:
        raise DegenerateMapError("cc_loss: ground-truth map is constant")
    yc = sub(y, mean(y))
    sy = _std(yc)
    if sy.item() < eps:
        raise DegenerateMapError("cc_loss: prediction is constant")
    cov = mean(hadamard(yc, Tensor(qc)))
    return div(mul_scalar(cov, -1.0 / sq), clamp_min(sy, eps))


def nss_loss(Y: Tensor, P: MapLike, eps: float = DEFAULT_EPS) -> Tensor:
    """Negative mean of the standardized prediction at fixated cells."""
    y = _prediction(Y, "nss_loss")
    p = _target(P, y.shape, "nss_loss")
    n = float(p.sum())
    if n <= 0:
        raise NoFixationError("nss_loss: fixation map has no fixated cells")
    yc = sub(y, mean(y))
    sy = _std(yc)
    if sy.item() < eps:
        raise DegenerateMapError("nss_loss: prediction is constant")
    z = div(yc, clamp_min(sy, eps))
    return mul_scalar(total(hadamard(z, Tensor(p))), -1.0 / n)


@dataclass
class LossTerms:
    """Unweighted loss components; absent terms are ``None``."""

    kl: Optional[Tensor] = None
    cc: Optional[Tensor] = None
    nss: Optional[Tensor] = None

    def __add__(self, other: "LossTerms") -> "LossTerms":
        def both(a: Optional[Tensor], b: Optional[Tensor]) -> Optional[Tensor]:
            if a is None:
                return b
            if b is None:
                return a
            return add(a, b)

        return LossTerms(both(self.kl, other.kl), both(self.cc, other.cc), both(self.nss, other.nss))

    def combine(self, weights: LossWeights) -> Tensor:
        parts = []
        if self.kl is not None:
            parts.append(self.kl)
        if self.cc is not None:
            parts.append(mul_scalar(self.cc, weights.alpha_cc))
        if self.nss is not None:
            parts.append(mul_scalar(self.nss, weights.alpha_nss))
        if not parts:
            raise NoFixationError("no frame carries any ground truth")
        result = parts[0]
        for part in parts[1:]:
            result = add(result, part)
        return result

    def values(self) -> dict[str, float]:
        return {
            name: (term.item() if term is not None else float("nan"))
            for name, term in (("kl", self.kl), ("cc", self.cc), ("nss", self.nss))
        }


def frame_terms(
    Y: Tensor,
    P: Optional[MapLike],
    Q: Optional[MapLike],
    weights: LossWeights,
) -> LossTerms:
    """Components for one frame; KL/CC need Q, NSS needs a fixated cell in P."""
    terms = LossTerms()
    if Q is not None:
        terms.kl = kl_div(Y, Q, weights.eps)
        terms.cc = cc_loss(Y, Q, weights.eps)
    if P is not None and float(np.sum(P.data if isinstance(P, Tensor) else P)) > 0:
        terms.nss = nss_loss(Y, P, weights.eps)
    return terms


def combined_loss(Y: Tensor, P: MapLike, Q: MapLike, weights: LossWeights = LossWeights()) -> Tensor:
    terms = LossTerms(
        kl=kl_div(Y, Q, weights.eps),
        cc=cc_loss(Y, Q, weights.eps),
        nss=nss_loss(Y, P, weights.eps),
    )
    return terms.combine(weights)


def sequence_terms(
    Y_list: Sequence[Tensor],
    P_list: Sequence[Optional[MapLike]],
    Q_list: Sequence[Optional[MapLike]],
    weights: LossWeights,
) -> LossTerms:
    if not (len(Y_list) == len(P_list) == len(Q_list)):
        raise DimensionError(
            f"sequence lengths differ: {len(Y_list)} predictions, "
            f"{len(P_list)} fixation maps, {len(Q_list)} distributions"
        )
    if not Y_list:
        raise DimensionError("empty sequence")
    summed = LossTerms()
    for y, p, q in zip(Y_list, P_list, Q_list):
        summed = summed + frame_terms(y, p, q, weights)
    return summed


def video_loss(
    Y_list: Sequence[Tensor],
    P_list: Sequence[Optional[MapLike]],
    Q_list: Sequence[Optional[MapLike]],
    weights: LossWeights = LossWeights(),
) -> Tensor:
    """Sum of per-frame composite losses over a clip."""
    return sequence_terms(Y_list, P_list, Q_list, weights).combine(weights)


def image_loss(M: Tensor, P: MapLike, Q: MapLike, weights: LossWeights = LossWeights()) -> Tensor:
    """Composite loss of an attention map against static-image ground truth."""
    return combined_loss(M, P, Q, weights)
