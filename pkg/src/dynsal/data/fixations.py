"""Fixation records, binary fixation maps and blurred saliency distributions."""
from __future__ import annotations

import csv
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import ndimage

from dynsal.errors import ConfigurationError, DataError, DimensionError, NoFixationError

logger = logging.getLogger(__name__)

HEADER = ("video_id", "frame_idx", "observer_id", "x", "y")
TRUNCATE = 4.0
SIGMA_DIVISOR = 32


@dataclass(frozen=True, order=True)
class FixationRecord:
    video_id: str
    frame_idx: int
    observer_id: str
    x: int
    y: int

    def to_row(self) -> list[str]:
        return [self.video_id, str(self.frame_idx), self.observer_id, str(self.x), str(self.y)]


@dataclass(frozen=True)
class RowDiagnostic:
    line: int
    message: str

    def __str__(self) -> str:
        return f"line {self.line}: {self.message}"


@dataclass
class FixationTable:
    """Validated rows of one fixation file plus the rows it rejected."""

    path: str
    records: list[FixationRecord] = field(default_factory=list)
    diagnostics: list[RowDiagnostic] = field(default_factory=list)

    def by_frame(self) -> dict[tuple[str, int], list[FixationRecord]]:
        return group_by_frame(self.records)


def _parse_row(row: list[str], size: Optional[tuple[int, int]]) -> FixationRecord:
    if len(row) != len(HEADER):
        raise ValueError(f"expected {len(HEADER)} columns, got {len(row)}")
    video_id, frame_text, observer_id, x_text, y_text = (cell.strip() for cell in row)
    if not video_id:
        raise ValueError("empty video_id")
    frame_idx, x, y = int(frame_text), int(x_text), int(y_text)
    if frame_idx < 0:
        raise ValueError(f"negative frame_idx {frame_idx}")
    if size is not None:
        height, width = size
        if not (0 <= x < width and 0 <= y < height):
            raise ValueError(f"coordinate ({x}, {y}) outside {width}x{height}")
    elif x < 0 or y < 0:
        raise ValueError(f"negative coordinate ({x}, {y})")
    return FixationRecord(video_id, frame_idx, observer_id, x, y)


def read_fixations(path: Path | str, size: Optional[tuple[int, int]] = None) -> FixationTable:
    """Parse a fixation CSV; bad rows become diagnostics instead of records.

    ``size`` is the ``(height, width)`` the coordinates must fall inside.
    """
    p = Path(path)
    table = FixationTable(path=str(p))
    try:
        handle = p.open(newline="", encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot read fixations: {e}") from e
    with handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or tuple(cell.strip() for cell in header) != HEADER:
            raise DataError(f"{p}:1: header must be {','.join(HEADER)}")
        for row in reader:
            if not row or not any(cell.strip() for cell in row):
                continue
            try:
                table.records.append(_parse_row(row, size))
            except ValueError as e:
                table.diagnostics.append(RowDiagnostic(reader.line_num, str(e)))
    for diag in table.diagnostics:
        logger.warning("%s: rejected %s", p, diag)
    return table


def load_fixations(path: Path | str, size: Optional[tuple[int, int]] = None) -> list[FixationRecord]:
    return read_fixations(path, size).records


def write_fixations(path: Path | str, records: Iterable[FixationRecord]) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with p.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(HEADER)
        for record in records:
            writer.writerow(record.to_row())
    return p


def group_by_frame(records: Iterable[FixationRecord]) -> dict[tuple[str, int], list[FixationRecord]]:
    frames: dict[tuple[str, int], list[FixationRecord]] = defaultdict(list)
    for record in records:
        frames[(record.video_id, record.frame_idx)].append(record)
    return dict(frames)


def rasterize(records: Sequence[FixationRecord], size: tuple[int, int]) -> np.ndarray:
    """Binary ``[H, W]`` map with a 1 wherever at least one fixation lands."""
    height, width = size
    fixation_map = np.zeros((height, width))
    if not records:
        return fixation_map
    ys = np.array([r.y for r in records])
    xs = np.array([r.x for r in records])
    if ys.min() < 0 or xs.min() < 0 or ys.max() >= height or xs.max() >= width:
        raise DataError(f"fixation outside the {width}x{height} frame")
    fixation_map[ys, xs] = 1.0
    return fixation_map


def default_sigma(width: int) -> float:
    return width / SIGMA_DIVISOR


def gaussian_kernel(sigma: float, truncate: float = TRUNCATE) -> np.ndarray:
    """Unnormalized isotropic Gaussian, zero beyond ``truncate * sigma``."""
    if sigma <= 0:
        raise ConfigurationError(f"sigma must be > 0, got {sigma}")
    cutoff = truncate * sigma
    radius = int(math.floor(cutoff))
    offsets = np.arange(-radius, radius + 1)
    dy, dx = np.meshgrid(offsets, offsets, indexing="ij")
    d2 = dy * dy + dx * dx
    kernel = np.exp(-d2 / (2.0 * sigma * sigma))
    kernel[d2 > cutoff * cutoff] = 0.0
    return kernel


def blur(counts: np.ndarray, sigma: float) -> np.ndarray:
    return ndimage.convolve(counts, gaussian_kernel(sigma), mode="constant", cval=0.0)


def densify(fixation_map: np.ndarray, sigma: float) -> np.ndarray:
    """Unit-sum distribution: one truncated Gaussian per fixated cell."""
    p = np.asarray(fixation_map, dtype=np.float64)
    if p.ndim != 2:
        raise DimensionError(f"densify expects an [H, W] map, got {p.shape}")
    if not np.any(p > 0):
        raise NoFixationError("densify: fixation map is empty")
    density = blur((p > 0).astype(np.float64), sigma)
    return density / density.sum()


def _blocks(arr: np.ndarray, factor: int) -> np.ndarray:
    h, w = arr.shape
    if factor < 1 or h % factor or w % factor:
        raise DimensionError(f"{h}x{w} map is not divisible by {factor}")
    return arr.reshape(h // factor, factor, w // factor, factor)


def downsample_fixation_map(fixation_map: np.ndarray, factor: int) -> np.ndarray:
    """A cell is fixated iff any pixel inside it is."""
    return (_blocks(np.asarray(fixation_map) > 0, factor).any(axis=(1, 3))).astype(np.float64)


def downsample_distribution(distribution: np.ndarray, factor: int) -> np.ndarray:
    """Box average to cells, renormalized to unit sum."""
    reduced = _blocks(np.asarray(distribution, dtype=np.float64), factor).mean(axis=(1, 3))
    total = reduced.sum()
    if total <= 0:
        raise NoFixationError("distribution has no mass")
    return reduced / total
