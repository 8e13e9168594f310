"""Per-frame evaluation, per-video / per-dataset aggregation and report files.

Predictions directory layout::

    <pred>/<video_id>/frame_00000.stns     [h, w] or [h, w, 1] map

Ground truth is a dataset directory (``dynsal.data.open_dataset``). Scores
are computed at ground-truth resolution; smaller predictions are upsampled
bilinearly by their integer factor first. Video means are unweighted over
frames and the dataset mean is unweighted over videos.
"""
from __future__ import annotations

import logging
import math
import re
import zlib
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from dynsal.data.dataset import SaliencyDataset, open_dataset
from dynsal.data.fixations import rasterize
from dynsal.errors import DataError, DimensionError, UsageError
from dynsal.metrics.scores import (
    DEFAULT_SPLITS,
    as_map,
    auc_judd,
    cc_metric,
    nss_metric,
    shuffled_auc,
    sim_metric,
)
from dynsal.tensor import Tensor, no_grad, upsample_bilinear
from dynsal.tensor.codec import SUFFIX, read_stns

logger = logging.getLogger(__name__)

METRICS = ("auc_j", "s_auc", "nss", "cc", "sim")
VALUES_SUFFIX = ".values"
VALUES_HEADER = ("metric", "video_id", "frame_idx", "value")
_FRAME_RE = re.compile(r"^frame_(\d{5})" + re.escape(SUFFIX) + "$")

FrameKey = tuple[str, int]


@dataclass(frozen=True, order=True)
class FrameScore:
    metric: str
    video_id: str
    frame_idx: int
    value: float


@dataclass(frozen=True, order=True)
class SkippedFrame:
    metric: str
    video_id: str
    frame_idx: int
    reason: str


@dataclass
class FrameTruth:
    fixation_map: np.ndarray
    distribution: Optional[np.ndarray]
    shuffle_pool: Optional[np.ndarray] = None


@dataclass
class MetricReport:
    scores: list[FrameScore] = field(default_factory=list)
    skipped: list[SkippedFrame] = field(default_factory=list)
    missing: list[FrameKey] = field(default_factory=list)
    unexpected: list[FrameKey] = field(default_factory=list)

    def merge(self, other: "MetricReport") -> "MetricReport":
        return MetricReport(
            scores=sorted(self.scores + other.scores),
            skipped=sorted(self.skipped + other.skipped),
            missing=sorted(self.missing + other.missing),
            unexpected=sorted(self.unexpected + other.unexpected),
        )

    def values(self, metric: str) -> dict[FrameKey, float]:
        return {(s.video_id, s.frame_idx): s.value for s in self.scores if s.metric == metric}

    def video_means(self) -> dict[str, dict[str, float]]:
        """``{metric: {video_id: mean over scored frames}}``."""
        per_video: dict[str, dict[str, list[float]]] = {m: defaultdict(list) for m in METRICS}
        for s in sorted(self.scores):
            per_video[s.metric][s.video_id].append(s.value)
        return {
            m: {vid: math.fsum(vals) / len(vals) for vid, vals in sorted(per_video[m].items())}
            for m in METRICS
        }

    def dataset_means(self) -> dict[str, float]:
        means = {}
        for metric, videos in self.video_means().items():
            means[metric] = math.fsum(videos.values()) / len(videos) if videos else float("nan")
        return means

    def frame_counts(self) -> dict[str, int]:
        counts = {m: 0 for m in METRICS}
        for s in self.scores:
            counts[s.metric] += 1
        return counts

    def skip_counts(self) -> dict[str, int]:
        counts = {m: 0 for m in METRICS}
        for s in self.skipped:
            counts[s.metric] += 1
        return counts


def frame_seed(seed: int, video_id: str, frame_idx: int) -> int:
    """Shuffle-AUC seed for one frame, independent of evaluation order."""
    sequence = np.random.SeedSequence([seed, zlib.crc32(video_id.encode("utf-8")), frame_idx])
    return int(sequence.generate_state(1)[0])


def match_resolution(prediction: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    pred = as_map(prediction)
    if pred.shape == shape:
        return pred
    factor = shape[0] // pred.shape[0]
    if factor < 1 or pred.shape[0] * factor != shape[0] or pred.shape[1] * factor != shape[1]:
        raise DimensionError(f"prediction {pred.shape} is not an integer downscale of {shape}")
    with no_grad():
        return upsample_bilinear(Tensor(pred[..., None]), factor).data[..., 0]


def score_frame(
    prediction: np.ndarray,
    truth: FrameTruth,
    key: FrameKey,
    *,
    splits: int = DEFAULT_SPLITS,
    seed: int = 0,
) -> tuple[list[FrameScore], list[SkippedFrame]]:
    vid, t = key
    scores: list[FrameScore] = []
    skipped: list[SkippedFrame] = []
    if not np.any(truth.fixation_map > 0):
        return scores, [SkippedFrame(m, vid, t, "no fixations") for m in METRICS]
    y = match_resolution(prediction, truth.fixation_map.shape)

    def attempt(metric: str, fn) -> None:
        try:
            scores.append(FrameScore(metric, vid, t, fn()))
        except DataError as e:
            skipped.append(SkippedFrame(metric, vid, t, str(e)))

    attempt("auc_j", lambda: auc_judd(y, truth.fixation_map))
    if truth.shuffle_pool is None:
        skipped.append(SkippedFrame("s_auc", vid, t, "no shuffle pool"))
    else:
        attempt("s_auc", lambda: shuffled_auc(
            y, truth.fixation_map, truth.shuffle_pool, splits, frame_seed(seed, vid, t),
        ))
    attempt("nss", lambda: nss_metric(y, truth.fixation_map))
    attempt("cc", lambda: cc_metric(y, truth.distribution))
    attempt("sim", lambda: sim_metric(y, truth.distribution))
    return scores, skipped


def evaluate_predictions(
    predictions: Mapping[FrameKey, np.ndarray],
    truths: Mapping[FrameKey, FrameTruth],
    *,
    splits: int = DEFAULT_SPLITS,
    seed: int = 0,
    workers: int = 1,
) -> MetricReport:
    """Score every ground-truth frame that has a prediction."""
    if workers < 1:
        raise UsageError(f"workers must be >= 1, got {workers}")
    keys = sorted(k for k in truths if k in predictions)
    report = MetricReport(
        missing=sorted(k for k in truths if k not in predictions),
        unexpected=sorted(k for k in predictions if k not in truths),
    )
    for vid, t in report.missing:
        logger.warning("no prediction for %s frame %d", vid, t)

    def run(key: FrameKey):
        return score_frame(predictions[key], truths[key], key, splits=splits, seed=seed)

    if workers == 1:
        results = [run(k) for k in keys]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, keys))
    for scores, skipped in results:
        report.scores.extend(scores)
        report.skipped.extend(skipped)
    report.scores.sort()
    report.skipped.sort()
    return report


def read_predictions(pred_dir: Path | str) -> dict[FrameKey, np.ndarray]:
    root = Path(pred_dir)
    if not root.is_dir():
        raise UsageError(f"prediction directory not found: {root}")
    predictions: dict[FrameKey, np.ndarray] = {}
    for video_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        for path in sorted(video_dir.iterdir()):
            match = _FRAME_RE.match(path.name)
            if match:
                predictions[(video_dir.name, int(match.group(1)))] = read_stns(path)
    return predictions


def _video_pool_maps(dataset: SaliencyDataset, size: tuple[int, int]) -> dict[str, np.ndarray]:
    if dataset.size != size:
        raise DimensionError(f"shuffle pool is {dataset.size}, ground truth is {size}")
    pools: dict[str, np.ndarray] = {}
    for vid in dataset.video_ids:
        records = [r for t in range(dataset.frame_counts[vid]) for r in dataset.records(vid, t)]
        pools[vid] = rasterize(records, size)
    return pools


def ground_truth_frames(
    dataset: SaliencyDataset,
    *,
    split: Optional[str] = None,
    shuffle_pool: Optional[SaliencyDataset] = None,
) -> dict[FrameKey, FrameTruth]:
    """Full-resolution ground truth for every frame of ``split`` (all videos
    when ``None``), with s-AUC negatives drawn from other videos."""
    video_ids = dataset.split.get(split) if split else dataset.video_ids
    pools = _video_pool_maps(shuffle_pool or dataset, dataset.size)
    truths: dict[FrameKey, FrameTruth] = {}
    for vid in video_ids:
        others = [m for other, m in pools.items() if other != vid]
        pool = np.clip(np.sum(others, axis=0), 0.0, 1.0) if others else None
        for t in range(dataset.frame_counts[vid]):
            p, q = dataset.ground_truth(vid, t)
            truths[(vid, t)] = FrameTruth(p, q, pool)
    return truths


def evaluate_dataset(
    pred_dir: Path | str,
    gt_dir: Path | str,
    *,
    shuffle_pool_dir: Path | str | None = None,
    split: Optional[str] = None,
    splits: int = DEFAULT_SPLITS,
    seed: int = 0,
    workers: int = 1,
) -> MetricReport:
    dataset = open_dataset(gt_dir)
    pool = open_dataset(shuffle_pool_dir) if shuffle_pool_dir is not None else None
    truths = ground_truth_frames(dataset, split=split, shuffle_pool=pool)
    report = evaluate_predictions(read_predictions(pred_dir), truths, splits=splits, seed=seed, workers=workers)
    logger.info(
        "evaluated %d frames (%d missing, %d unexpected)",
        len({(s.video_id, s.frame_idx) for s in report.scores}), len(report.missing), len(report.unexpected),
    )
    return report


def _fmt(value: float) -> str:
    return "nan" if math.isnan(value) else f"{value:.6f}"


def format_report(report: MetricReport) -> str:
    means = report.dataset_means()
    videos = report.video_means()
    frames = report.frame_counts()
    skips = report.skip_counts()
    lines = [f"{'metric':<8}{'mean':>12}{'videos':>8}{'frames':>8}{'skipped':>9}"]
    for m in METRICS:
        lines.append(f"{m:<8}{_fmt(means[m]):>12}{len(videos[m]):>8}{frames[m]:>8}{skips[m]:>9}")
    video_ids = sorted({vid for per in videos.values() for vid in per})
    if video_ids:
        lines.append("")
        lines.append(f"{'video':<12}" + "".join(f"{m:>12}" for m in METRICS))
        for vid in video_ids:
            cells = "".join(f"{_fmt(videos[m].get(vid, float('nan'))):>12}" for m in METRICS)
            lines.append(f"{vid:<12}{cells}")
    lines.append("")
    lines.append(f"missing frames: {len(report.missing)}")
    lines.extend(f"  {vid} {t}" for vid, t in report.missing)
    lines.append(f"unexpected frames: {len(report.unexpected)}")
    lines.extend(f"  {vid} {t}" for vid, t in report.unexpected)
    reasons: dict[tuple[str, str], int] = defaultdict(int)
    for s in report.skipped:
        reasons[(s.metric, s.reason)] += 1
    lines.append(f"skipped scores: {len(report.skipped)}")
    lines.extend(f"  {metric}: {reason} ({n})" for (metric, reason), n in sorted(reasons.items()))
    return "\n".join(lines) + "\n"


def write_report(report: MetricReport, path: Path | str) -> tuple[Path, Path]:
    """Write the text table to ``path`` and per-frame values to ``path.values``.

    The values file is tab-separated with the header
    ``metric, video_id, frame_idx, value`` and rows sorted in that order.
    """
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(format_report(report), encoding="utf-8")
    values = out.with_name(out.name + VALUES_SUFFIX)
    order = {m: i for i, m in enumerate(METRICS)}
    rows = sorted(report.scores, key=lambda s: (order[s.metric], s.video_id, s.frame_idx))
    lines = ["\t".join(VALUES_HEADER)]
    lines.extend(f"{s.metric}\t{s.video_id}\t{s.frame_idx}\t{s.value!r}" for s in rows)
    values.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return out, values
