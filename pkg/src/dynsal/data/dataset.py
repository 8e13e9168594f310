"""On-disk datasets, split manifests and the two batch samplers.

Dataset directory::

    dataset.cfg                  DatasetInfo (kind, height, width, sigma, seed)
    fixations.csv                video_id,frame_idx,observer_id,x,y
    splits.txt                   one "split,video_id" line per video
    videos/<video_id>/frame_00000.stns   [H, W, 3] frames, values 0..255

A static (image) dataset has the same layout with one frame per video.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from dynsal import config as cfg
from dynsal.data.fixations import (
    FixationRecord,
    RowDiagnostic,
    default_sigma,
    densify,
    downsample_distribution,
    downsample_fixation_map,
    rasterize,
    read_fixations,
)
from dynsal.errors import DataError, InventoryError
from dynsal.tensor.codec import SUFFIX, read_stns

logger = logging.getLogger(__name__)

INFO_FILE = "dataset.cfg"
FIXATIONS_FILE = "fixations.csv"
SPLITS_FILE = "splits.txt"
VIDEOS_DIR = "videos"
FRAME_PREFIX = "frame_"
PIXEL_SCALE = 255.0
SPLIT_NAMES = ("train", "val", "test")
SPLIT_PROPORTIONS = (0.6, 0.1, 0.3)
CARVE_FRACTION = 0.1
MIN_CARVE_VIDEOS = 10
KINDS = ("video", "static")


def frame_filename(frame_idx: int) -> str:
    return f"{FRAME_PREFIX}{frame_idx:05d}{SUFFIX}"


@dataclass(frozen=True)
class DatasetInfo:
    kind: str = "video"
    height: int = 96
    width: int = 96
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise DataError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.height < 1 or self.width < 1:
            raise DataError(f"frame size must be positive, got {self.height}x{self.width}")
        if self.sigma < 0:
            raise DataError(f"sigma must be >= 0, got {self.sigma}")

    @property
    def blur_sigma(self) -> float:
        """Configured sigma, or width/32 when unset (0)."""
        return self.sigma if self.sigma > 0 else default_sigma(self.width)


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[str, ...] = ()
    val: tuple[str, ...] = ()
    test: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        seen: dict[str, str] = {}
        for name in SPLIT_NAMES:
            for vid in getattr(self, name):
                if vid in seen:
                    raise DataError(f"video {vid!r} is in both {seen[vid]} and {name}")
                seen[vid] = name

    def get(self, name: str) -> tuple[str, ...]:
        if name not in SPLIT_NAMES:
            raise DataError(f"unknown split {name!r}; expected one of {SPLIT_NAMES}")
        return getattr(self, name)

    @property
    def all(self) -> tuple[str, ...]:
        return self.train + self.val + self.test


def make_split(video_ids: Sequence[str], seed: int) -> DatasetSplit:
    """Seeded 60/10/30 partition; val and test sizes round down."""
    ids = sorted(video_ids)
    order = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    n_val = math.floor(len(ids) * SPLIT_PROPORTIONS[1])
    n_test = math.floor(len(ids) * SPLIT_PROPORTIONS[2])
    n_train = len(ids) - n_val - n_test
    return DatasetSplit(
        train=tuple(sorted(shuffled[:n_train])),
        val=tuple(sorted(shuffled[n_train:n_train + n_val])),
        test=tuple(sorted(shuffled[n_train + n_val:])),
    )


def carve_validation(split: DatasetSplit, seed: int) -> DatasetSplit:
    """Move a seeded 10% of train into val when val is empty.

    Splits that already have validation videos, or fewer than ten training
    videos, come back unchanged.
    """
    if split.val or len(split.train) < MIN_CARVE_VIDEOS:
        return split
    n_val = max(1, math.floor(len(split.train) * CARVE_FRACTION))
    order = np.random.default_rng(seed).permutation(len(split.train))
    carved = {split.train[i] for i in order[:n_val]}
    return DatasetSplit(
        train=tuple(v for v in split.train if v not in carved),
        val=tuple(sorted(carved)),
        test=split.test,
    )


def write_split_manifest(path: Path | str, split: DatasetSplit) -> Path:
    p = Path(path)
    lines = [f"{name},{vid}" for name in SPLIT_NAMES for vid in split.get(name)]
    p.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return p


def load_split_manifest(path: Path | str) -> DatasetSplit:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot read split manifest: {e}") from e
    members: dict[str, list[str]] = {name: [] for name in SPLIT_NAMES}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [part.strip() for part in line.split(",")]
        if len(parts) != 2 or not parts[1]:
            raise DataError(f"{p}:{lineno}: expected 'split,video_id'")
        name, vid = parts
        if name not in members:
            raise DataError(f"{p}:{lineno}: unknown split {name!r}")
        members[name].append(vid)
    try:
        return DatasetSplit(**{name: tuple(ids) for name, ids in members.items()})
    except DataError as e:
        raise DataError(f"{p}: {e}") from e


# ---------------------------------------------------------------------------
# Dataset access
# ---------------------------------------------------------------------------

@dataclass
class Clip:
    """Consecutive frames of one video with ground truth at one resolution.

    ``frames`` are scaled to [0, 1]. ``distributions`` entries are ``None``
    for frames without fixations.
    """

    video_id: str
    start: int
    frames: np.ndarray
    fixation_maps: list[np.ndarray]
    distributions: list[Optional[np.ndarray]]

    def __len__(self) -> int:
        return self.frames.shape[0]


@dataclass
class ImageBatch:
    items: list[tuple[str, int]]
    images: np.ndarray
    fixation_maps: list[np.ndarray]
    distributions: list[np.ndarray]

    def __len__(self) -> int:
        return self.images.shape[0]


@dataclass
class SaliencyDataset:
    root: Path
    info: DatasetInfo
    split: DatasetSplit
    frame_counts: dict[str, int]
    fixations: dict[tuple[str, int], list[FixationRecord]]
    diagnostics: list[RowDiagnostic] = field(default_factory=list)
    _truth: dict[tuple[str, int, int], tuple[np.ndarray, Optional[np.ndarray]]] = field(
        default_factory=dict, repr=False,
    )

    @property
    def size(self) -> tuple[int, int]:
        return (self.info.height, self.info.width)

    @property
    def video_ids(self) -> tuple[str, ...]:
        return tuple(sorted(self.frame_counts))

    def video_dir(self, video_id: str) -> Path:
        return self.root / VIDEOS_DIR / video_id

    def frame_path(self, video_id: str, frame_idx: int) -> Path:
        return self.video_dir(video_id) / frame_filename(frame_idx)

    def load_frame(self, video_id: str, frame_idx: int) -> np.ndarray:
        """Raw ``[H, W, 3]`` frame, values 0..255."""
        frame = read_stns(self.frame_path(video_id, frame_idx))
        if frame.shape != (self.info.height, self.info.width, 3):
            raise DataError(
                f"{self.frame_path(video_id, frame_idx)} has shape {frame.shape}, "
                f"dataset declares {self.info.height}x{self.info.width}x3"
            )
        return frame

    def load_frames(self, video_id: str, start: int, length: int) -> np.ndarray:
        """``[length, H, W, 3]`` frames scaled to [0, 1]."""
        if start < 0 or start + length > self.frame_counts[video_id]:
            raise DataError(f"frames {start}..{start + length - 1} outside video {video_id}")
        return np.stack([self.load_frame(video_id, t) for t in range(start, start + length)]) / PIXEL_SCALE

    def records(self, video_id: str, frame_idx: int) -> list[FixationRecord]:
        return self.fixations.get((video_id, frame_idx), [])

    def has_fixations(self, video_id: str, frame_idx: int) -> bool:
        return bool(self.records(video_id, frame_idx))

    def ground_truth(self, video_id: str, frame_idx: int, factor: int = 1) -> tuple[np.ndarray, Optional[np.ndarray]]:
        """``(P, Q)`` reduced by ``factor``; Q is ``None`` without fixations."""
        key = (video_id, frame_idx, factor)
        if key not in self._truth:
            p_full = rasterize(self.records(video_id, frame_idx), self.size)
            if not p_full.any():
                truth = (downsample_fixation_map(p_full, factor), None)
            else:
                q_full = densify(p_full, self.info.blur_sigma)
                truth = (downsample_fixation_map(p_full, factor), downsample_distribution(q_full, factor))
            self._truth[key] = truth
        return self._truth[key]

    def clip(self, video_id: str, start: int, length: int, factor: int) -> Clip:
        truths = [self.ground_truth(video_id, t, factor) for t in range(start, start + length)]
        return Clip(
            video_id=video_id,
            start=start,
            frames=self.load_frames(video_id, start, length),
            fixation_maps=[p for p, _ in truths],
            distributions=[q for _, q in truths],
        )

    def image_items(self, split: str = "train") -> list[tuple[str, int]]:
        """Frames of ``split`` that carry at least one fixation."""
        ids = self.split.get(split) if split else self.video_ids
        return [
            (vid, t)
            for vid in ids
            for t in range(self.frame_counts.get(vid, 0))
            if self.has_fixations(vid, t)
        ]

    def fixation_records(self) -> list[FixationRecord]:
        return [r for key in sorted(self.fixations) for r in self.fixations[key]]


def _count_frames(video_dir: Path) -> int:
    names = sorted(p.name for p in video_dir.glob(f"{FRAME_PREFIX}*{SUFFIX}"))
    expected = [frame_filename(i) for i in range(len(names))]
    if names != expected:
        raise InventoryError(f"{video_dir}: frame files are not numbered 0..{len(names) - 1} contiguously")
    return len(names)


def load_video_dir(video_dir: Path | str) -> np.ndarray:
    """All frames of a bare video directory as ``[T, H, W, 3]`` in [0, 1]."""
    path = Path(video_dir)
    if not path.is_dir():
        raise DataError(f"video directory not found: {path}")
    count = _count_frames(path)
    if count == 0:
        raise InventoryError(f"{path} has no frames")
    frames = [read_stns(path / frame_filename(t)) for t in range(count)]
    shape = frames[0].shape
    if len(shape) != 3 or shape[2] != 3:
        raise DataError(f"{path / frame_filename(0)} has shape {shape}, expected [H, W, 3]")
    for t, frame in enumerate(frames):
        if frame.shape != shape:
            raise DataError(f"{path / frame_filename(t)} has shape {frame.shape}, first frame {shape}")
    return np.stack(frames) / PIXEL_SCALE


def open_dataset(root: Path | str) -> SaliencyDataset:
    """Open and validate a dataset directory."""
    base = Path(root)
    if not base.is_dir():
        raise DataError(f"dataset directory not found: {base}")
    for name in (INFO_FILE, FIXATIONS_FILE, SPLITS_FILE):
        if not (base / name).is_file():
            raise DataError(f"{base} is missing {name}")
    (info,) = cfg.load_config(base / INFO_FILE, DatasetInfo)
    split = load_split_manifest(base / SPLITS_FILE)

    frame_counts: dict[str, int] = {}
    for vid in split.all:
        video_dir = base / VIDEOS_DIR / vid
        if not video_dir.is_dir():
            raise InventoryError(f"{base}: split lists video {vid!r} but {video_dir} does not exist")
        frame_counts[vid] = _count_frames(video_dir)
        if frame_counts[vid] == 0:
            raise InventoryError(f"{video_dir} has no frames")
        if info.kind == "static" and frame_counts[vid] != 1:
            raise DataError(f"static dataset image {vid!r} has {frame_counts[vid]} frames")

    table = read_fixations(base / FIXATIONS_FILE, (info.height, info.width))
    fixations = {
        key: records for key, records in table.by_frame().items()
        if key[1] < frame_counts.get(key[0], 0)
    }
    kept = sum(len(records) for records in fixations.values())
    unknown = len(table.records) - kept
    if unknown:
        logger.warning("%s: ignored %d fixations on unknown frames", base, unknown)

    dataset = SaliencyDataset(
        root=base,
        info=info,
        split=split,
        frame_counts=frame_counts,
        fixations=fixations,
        diagnostics=table.diagnostics,
    )
    logger.info(
        "opened %s dataset %s: %d videos, %d fixations",
        info.kind, base, len(frame_counts), kept,
    )
    return dataset


# ---------------------------------------------------------------------------
# Samplers
# ---------------------------------------------------------------------------

Datasets = Union[SaliencyDataset, Sequence[SaliencyDataset]]


def _as_list(datasets: Datasets) -> list[SaliencyDataset]:
    return [datasets] if isinstance(datasets, SaliencyDataset) else list(datasets)


def draw_clip_window(
    frame_counts: Sequence[int],
    rng: np.random.Generator,
    length: int,
) -> tuple[int, int]:
    """Pick ``(video_index, start)`` uniformly among videos long enough for
    ``length`` frames, then uniformly over start positions."""
    eligible = [i for i, n in enumerate(frame_counts) if n >= length]
    if not eligible:
        raise DataError(f"no video has at least {length} frames")
    video = eligible[int(rng.integers(len(eligible)))]
    start = int(rng.integers(frame_counts[video] - length + 1))
    return video, start


def draw_image_indices(count: int, rng: np.random.Generator, batch_size: int) -> np.ndarray:
    """Without replacement when enough images exist, with replacement otherwise."""
    if count < 1:
        raise DataError("no static images to sample")
    return rng.choice(count, size=batch_size, replace=count < batch_size)


def sample_video_batch(
    datasets: Datasets,
    rng: np.random.Generator,
    *,
    length: int = 20,
    factor: int = 8,
    split: str = "train",
) -> Clip:
    """Random contiguous clip from the pooled ``split`` videos."""
    candidates = [(ds, vid) for ds in _as_list(datasets) for vid in ds.split.get(split)]
    if not candidates:
        raise DataError(f"no {split} videos to sample from")
    index, start = draw_clip_window([ds.frame_counts[vid] for ds, vid in candidates], rng, length)
    ds, vid = candidates[index]
    return ds.clip(vid, start, length, factor)


def sample_image_batch(
    datasets: Datasets,
    rng: np.random.Generator,
    *,
    batch_size: int = 20,
    factor: int = 8,
    items: Optional[Sequence[tuple[int, str, int]]] = None,
) -> ImageBatch:
    """Random static images with ground truth.

    ``items`` restricts sampling to ``(dataset_index, video_id, frame)``
    triples, as built by ``static_items``.
    """
    pool = _as_list(datasets)
    items = list(items) if items is not None else static_items(pool)
    picks = draw_image_indices(len(items), rng, batch_size)
    images, fixation_maps, distributions, chosen = [], [], [], []
    for i in picks:
        d, vid, t = items[int(i)]
        p, q = pool[d].ground_truth(vid, t, factor)
        images.append(pool[d].load_frame(vid, t) / PIXEL_SCALE)
        fixation_maps.append(p)
        distributions.append(q)
        chosen.append((vid, t))
    return ImageBatch(chosen, np.stack(images), fixation_maps, distributions)


def static_items(
    datasets: Datasets,
    *,
    fraction: float = 1.0,
    seed: int = 0,
    split: str = "train",
) -> list[tuple[int, str, int]]:
    """Fixated frames across ``datasets``, optionally a seeded subset."""
    items = [
        (d, vid, t)
        for d, ds in enumerate(_as_list(datasets))
        for vid, t in ds.image_items(split)
    ]
    if not 0 < fraction <= 1:
        raise DataError(f"static fraction must be in (0, 1], got {fraction}")
    if fraction < 1 and items:
        keep = max(1, round(len(items) * fraction))
        order = np.random.default_rng(seed).permutation(len(items))[:keep]
        items = [items[i] for i in sorted(order)]
    return items
