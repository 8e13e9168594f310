"""Synthetic saliency datasets: bright moving blobs over a drifting texture.

Observers fixate blob centers with a jitter of at most half the blob
radius, so every fixation lands inside the rendered blob. Output is a
complete dataset directory (see ``dynsal.data.dataset``) and is
byte-identical for a given ``SynthConfig``.
"""
from __future__ import annotations

import logging
import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from dynsal import config as cfg
from dynsal.data.dataset import (
    FIXATIONS_FILE,
    INFO_FILE,
    KINDS,
    PIXEL_SCALE,
    SPLITS_FILE,
    VIDEOS_DIR,
    DatasetInfo,
    DatasetSplit,
    frame_filename,
    make_split,
    write_split_manifest,
)
from dynsal.data.fixations import FixationRecord, default_sigma, write_fixations
from dynsal.errors import UsageError
from dynsal.tensor.codec import write_stns

logger = logging.getLogger(__name__)

RADIUS_DIVISOR = 12
MIN_RADIUS = 2.0
SPEED_DIVISOR = 40


@dataclass(frozen=True)
class SynthConfig:
    videos: int = 2
    frames: int = 24
    size: int = 96
    seed: int = 7
    observers: int = 8
    blobs: int = 1
    kind: str = "video"

    def __post_init__(self) -> None:
        for name in ("videos", "frames", "size", "observers", "blobs"):
            if getattr(self, name) < 1:
                raise UsageError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.kind not in KINDS:
            raise UsageError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.kind == "static" and self.frames != 1:
            raise UsageError("static datasets have exactly one frame per image")

    @property
    def radius(self) -> float:
        return max(MIN_RADIUS, self.size / RADIUS_DIVISOR)

    def video_id(self, index: int) -> str:
        return f"{'img' if self.kind == 'static' else 'vid'}{index:03d}"


@dataclass
class RenderedVideo:
    frames: np.ndarray          # [T, S, S, 3], integer values 0..255
    centers: np.ndarray         # [T, blobs, 2] as (x, y)
    radius: float
    fixations: list[tuple[int, int, int, int]]  # (frame, observer, x, y)

    def blob_mask(self, frame_idx: int) -> np.ndarray:
        """Pixels within ``radius`` of any blob center."""
        size = self.frames.shape[1]
        ys, xs = np.mgrid[0:size, 0:size]
        mask = np.zeros((size, size), dtype=bool)
        for cx, cy in self.centers[frame_idx]:
            mask |= (xs - cx) ** 2 + (ys - cy) ** 2 <= self.radius ** 2
        return mask


def _trajectories(rng: np.random.Generator, config: SynthConfig) -> np.ndarray:
    size, r = config.size, config.radius
    lo, hi = (r, size - 1 - r) if size - 1 > 2 * r else ((size - 1) / 2, (size - 1) / 2)
    pos = rng.uniform(lo, hi, size=(config.blobs, 2))
    angle = rng.uniform(0.0, 2.0 * np.pi, size=config.blobs)
    vel = np.stack([np.cos(angle), np.sin(angle)], axis=1) * (size / SPEED_DIVISOR)
    centers = np.empty((config.frames, config.blobs, 2))
    for t in range(config.frames):
        centers[t] = pos
        pos = pos + vel
        for axis in range(2):
            low, high = pos[:, axis] < lo, pos[:, axis] > hi
            pos[low, axis] = 2 * lo - pos[low, axis]
            pos[high, axis] = 2 * hi - pos[high, axis]
            vel[low | high, axis] *= -1
        pos = np.clip(pos, lo, hi)
    return centers


def _texture(rng: np.random.Generator, config: SynthConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    freq = rng.uniform(1.0, 4.0, size=(2, 2)) * 2.0 * np.pi / config.size
    phase = rng.uniform(0.0, 2.0 * np.pi, size=2)
    drift = rng.uniform(0.05, 0.2, size=2)
    tint = rng.uniform(0.3, 0.5, size=3)
    ys, xs = np.mgrid[0:config.size, 0:config.size]
    return np.stack([freq[i, 0] * xs + freq[i, 1] * ys + phase[i] for i in range(2)]), drift, tint


def render_video(rng: np.random.Generator, config: SynthConfig) -> RenderedVideo:
    centers = _trajectories(rng, config)
    waves, drift, tint = _texture(rng, config)
    colors = rng.uniform(0.8, 1.0, size=(config.blobs, 3))
    r = config.radius
    ys, xs = np.mgrid[0:config.size, 0:config.size]

    frames = np.empty((config.frames, config.size, config.size, 3))
    for t in range(config.frames):
        shade = 0.5 + 0.25 * (np.sin(waves[0] + drift[0] * t) + np.sin(waves[1] - drift[1] * t)) / 2.0
        image = shade[..., None] * tint
        for (cx, cy), color in zip(centers[t], colors):
            d2 = (xs - cx) ** 2 + (ys - cy) ** 2
            alpha = np.where(d2 <= r * r, np.exp(-d2 / (2.0 * (r / 2.0) ** 2)), 0.0)[..., None]
            image = image * (1.0 - alpha) + color * alpha
        frames[t] = np.round(np.clip(image, 0.0, 1.0) * PIXEL_SCALE)

    fixations = []
    for t in range(config.frames):
        for observer in range(config.observers):
            cx, cy = centers[t, int(rng.integers(config.blobs))]
            angle = rng.uniform(0.0, 2.0 * np.pi)
            dist = (r / 2.0) * np.sqrt(rng.uniform())
            x = int(np.clip(round(cx + dist * np.cos(angle)), 0, config.size - 1))
            y = int(np.clip(round(cy + dist * np.sin(angle)), 0, config.size - 1))
            fixations.append((t, observer, x, y))
    return RenderedVideo(frames=frames, centers=centers, radius=r, fixations=fixations)


@dataclass
class SynthSummary:
    root: Path
    split: DatasetSplit
    videos: int
    frames: int
    fixations: int


def _prepare_out(out: Path, force: bool) -> None:
    if out.exists() and not out.is_dir():
        raise UsageError(f"output path exists and is not a directory: {out}")
    if out.is_dir() and any(out.iterdir()):
        if not force:
            raise UsageError(f"output directory {out} is not empty (use --force to overwrite)")
        shutil.rmtree(out / VIDEOS_DIR, ignore_errors=True)
    out.mkdir(parents=True, exist_ok=True)


def synthesize_dataset(out: Path | str, config: SynthConfig, *, force: bool = False) -> SynthSummary:
    root = Path(out)
    _prepare_out(root, force)
    seeds = np.random.SeedSequence(config.seed).spawn(config.videos)
    records: list[FixationRecord] = []
    ids = []
    for index, seed in enumerate(seeds):
        vid = config.video_id(index)
        ids.append(vid)
        video = render_video(np.random.default_rng(seed), config)
        for t, frame in enumerate(video.frames):
            write_stns(root / VIDEOS_DIR / vid / frame_filename(t), frame)
        records.extend(
            FixationRecord(vid, t, f"obs{observer:02d}", x, y)
            for t, observer, x, y in video.fixations
        )

    info = DatasetInfo(
        kind=config.kind,
        height=config.size,
        width=config.size,
        sigma=default_sigma(config.size),
        seed=config.seed,
    )
    (root / INFO_FILE).write_text("\n".join(cfg.dump(info)) + "\n", encoding="utf-8")
    write_fixations(root / FIXATIONS_FILE, records)
    split = make_split(ids, config.seed)
    write_split_manifest(root / SPLITS_FILE, split)
    logger.info(
        "synthesized %d %s(s) of %d frame(s) at %dx%d into %s",
        config.videos, config.kind, config.frames, config.size, config.size, root,
    )
    return SynthSummary(root, split, config.videos, config.frames, len(records))
