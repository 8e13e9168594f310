"""Fixation-prediction scores: AUC-Judd, shuffled AUC, NSS, CC and SIM.

Maps are 2-D arrays (``[h, w, 1]`` tensors and arrays are accepted too).
A score that is undefined for its inputs raises a ``DataError`` subclass
naming the reason; evaluation records those frames as skipped.
"""
from __future__ import annotations

from typing import Iterable, Literal, Union

import numpy as np

from dynsal.data.fixations import FixationRecord, blur, default_sigma
from dynsal.errors import DataError, DegenerateMapError, DimensionError, NoFixationError, UsageError
from dynsal.tensor import Tensor

MapLike = Union[np.ndarray, Tensor]

DEFAULT_EPS = 1e-8
DEFAULT_SPLITS = 100


def as_map(x: MapLike) -> np.ndarray:
    arr = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    if arr.ndim != 2:
        raise DimensionError(f"expected a 2-D map, got shape {arr.shape}")
    return arr.astype(np.float64, copy=False)


def _pair(y: MapLike, target: MapLike) -> tuple[np.ndarray, np.ndarray]:
    a, b = as_map(y), as_map(target)
    if a.shape != b.shape:
        raise DimensionError(f"map shapes differ: {a.shape} vs {b.shape}")
    return a, b


def pair_auc(positives: np.ndarray, negatives: np.ndarray) -> float:
    """Fraction of (positive, negative) pairs ranked correctly; ties count 1/2."""
    neg = np.sort(np.asarray(negatives, dtype=np.float64))
    pos = np.asarray(positives, dtype=np.float64)
    below = np.searchsorted(neg, pos, side="left")
    tied = np.searchsorted(neg, pos, side="right") - below
    return float((below.sum() + 0.5 * tied.sum()) / (pos.size * neg.size))


def _fixated_threshold_auc(positives: np.ndarray, negatives: np.ndarray) -> float:
    thresholds = np.unique(positives)[::-1]
    neg = np.sort(negatives)
    pos = np.sort(positives)
    tp = [0.0] + [(pos.size - np.searchsorted(pos, t, side="left")) / pos.size for t in thresholds] + [1.0]
    fp = [0.0] + [(neg.size - np.searchsorted(neg, t, side="left")) / neg.size for t in thresholds] + [1.0]
    area = 0.0
    for i in range(1, len(tp)):
        area += (fp[i] - fp[i - 1]) * (tp[i] + tp[i - 1]) / 2.0
    return float(area)


def auc_judd(
    Y: MapLike,
    P: MapLike,
    thresholds: Literal["all", "fixated"] = "all",
) -> float:
    """ROC area with fixated cells as positives and every other cell as a negative.

    ``thresholds="all"`` sweeps every distinct map value (the exact ROC,
    equal to pair counting). ``"fixated"`` sweeps only values found at
    fixated cells, the benchmark convention.
    """
    y, p = _pair(Y, P)
    fixated = p > 0
    if not fixated.any():
        raise NoFixationError("auc_judd: no fixated cells")
    if fixated.all():
        raise DegenerateMapError("auc_judd: every cell is fixated, no negatives")
    positives, negatives = y[fixated], y[~fixated]
    if thresholds == "all":
        return pair_auc(positives, negatives)
    if thresholds == "fixated":
        return _fixated_threshold_auc(positives, negatives)
    raise UsageError(f"thresholds must be 'all' or 'fixated', got {thresholds!r}")


def shuffled_auc(
    Y: MapLike,
    P: MapLike,
    negatives: MapLike,
    splits: int = DEFAULT_SPLITS,
    rng_seed: int = 0,
) -> float:
    """Mean AUC over ``splits`` draws of negatives from the shuffle pool.

    ``negatives`` marks cells fixated in other videos; each split samples
    ``min(pool, N)`` of them without replacement.
    """
    y, p = _pair(Y, P)
    pool_map = as_map(negatives)
    if pool_map.shape != y.shape:
        raise DimensionError(f"shuffle pool {pool_map.shape} does not match map {y.shape}")
    if splits < 1:
        raise UsageError(f"splits must be >= 1, got {splits}")
    positives = y[p > 0]
    if positives.size == 0:
        raise NoFixationError("shuffled_auc: no fixated cells")
    pool = y[pool_map > 0]
    if pool.size == 0:
        raise DataError("shuffled_auc: empty negative pool")
    rng = np.random.default_rng(rng_seed)
    k = min(pool.size, positives.size)
    scores = [pair_auc(positives, pool[rng.choice(pool.size, size=k, replace=False)]) for _ in range(splits)]
    return float(np.mean(scores))


def _standardize(y: np.ndarray, eps: float, what: str) -> np.ndarray:
    sd = y.std()
    if sd < eps:
        raise DegenerateMapError(f"{what}: map is constant")
    return (y - y.mean()) / sd


def nss_metric(Y: MapLike, P: MapLike, eps: float = DEFAULT_EPS) -> float:
    y, p = _pair(Y, P)
    n = p.sum()
    if n <= 0:
        raise NoFixationError("nss: no fixated cells")
    return float((_standardize(y, eps, "nss") * p).sum() / n)


def cc_metric(Y: MapLike, Q: MapLike, eps: float = DEFAULT_EPS) -> float:
    y, q = _pair(Y, Q)
    return float(np.mean(_standardize(y, eps, "cc prediction") * _standardize(q, eps, "cc ground truth")))


def sim_metric(Y: MapLike, Q: MapLike) -> float:
    """Histogram intersection of the two maps after unit-sum normalization."""
    y, q = _pair(Y, Q)
    if np.any(y < 0) or np.any(q < 0):
        raise DataError("sim: maps must be non-negative")
    sy, sq = y.sum(), q.sum()
    if sy <= 0 or sq <= 0:
        raise DegenerateMapError("sim: map has no mass")
    return float(np.minimum(y / sy, q / sq).sum())


def center_bias_map(
    fixations: Iterable[FixationRecord],
    size: tuple[int, int],
    sigma: float | None = None,
) -> np.ndarray:
    """Average annotation map: all fixations accumulated, blurred, scaled to max 1."""
    height, width = size
    records = list(fixations)
    if not records:
        raise NoFixationError("center_bias_map needs at least one fixation")
    counts = np.zeros((height, width))
    ys = np.array([r.y for r in records])
    xs = np.array([r.x for r in records])
    if ys.min() < 0 or xs.min() < 0 or ys.max() >= height or xs.max() >= width:
        raise DataError(f"fixation outside the {width}x{height} frame")
    np.add.at(counts, (ys, xs), 1.0)
    density = blur(counts, sigma if sigma is not None else default_sigma(width))
    return density / density.max()
