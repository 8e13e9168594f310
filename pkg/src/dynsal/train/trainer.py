"""Alternating video / image training with Adam, step decay and early stopping.

Each optimization step takes one video clip (full model, summed per-frame
loss) followed by ``image_ratio`` static-image batches that train only the
encoder and attention branch: convLSTM and readout parameters are left out
of the image-batch update entirely, so their values and Adam moments stay
bit-identical.
"""
from __future__ import annotations

import dataclasses
import logging
import math
import queue
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Callable, Iterator, Optional, Sequence, Union

import numpy as np

from dynsal.data.dataset import (
    Clip,
    ImageBatch,
    SaliencyDataset,
    carve_validation,
    sample_image_batch,
    sample_video_batch,
    static_items,
)
from dynsal.errors import ConfigurationError, DataError, NoFixationError, NumericalError
from dynsal.losses import LossTerms, LossWeights, sequence_terms, video_loss
from dynsal.metrics.scores import center_bias_map, nss_metric
from dynsal.model.checkpoint import save_checkpoint
from dynsal.model.network import attend_frame, forward_sequence, predict_maps
from dynsal.model.params import DOWNSAMPLING, RECURRENT_PREFIXES, ModelConfig, ModelParams, init_params
from dynsal.tensor import Tensor, no_grad
from dynsal.train.optim import OptimState, adam_step, lr_at

logger = logging.getLogger(__name__)

LOG_FILE = "train.log"
LOG_HEADER = ("step", "epoch", "batch", "loss", "kl", "cc", "nss", "lr")
ENCODER_PREFIX = "encoder."

Datasets = Union[SaliencyDataset, Sequence[SaliencyDataset]]


@dataclass(frozen=True)
class TrainConfig:
    base_lr: float = 1e-4
    decay_factor: float = 10.0
    decay_every: int = 2
    epochs: int = 10
    patience: int = 2
    seed: int = 0
    steps_per_epoch: int = 50
    clip_length: int = 20
    image_batch_size: int = 20
    image_ratio: int = 1
    static_fraction: float = 1.0
    freeze_encoder: bool = False
    alpha_cc: float = 0.1
    alpha_nss: float = 0.1
    loss_eps: float = 1e-8
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    prefetch: int = 2

    def __post_init__(self) -> None:
        positive = ("base_lr", "decay_factor", "decay_every", "epochs", "patience",
                    "steps_per_epoch", "clip_length", "image_batch_size")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.image_ratio < 0 or self.prefetch < 0:
            raise ConfigurationError("image_ratio and prefetch must be >= 0")
        if not 0 < self.static_fraction <= 1:
            raise ConfigurationError(f"static_fraction must be in (0, 1], got {self.static_fraction}")

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(self.alpha_cc, self.alpha_nss, self.loss_eps)

    def lr(self, epoch: int) -> float:
        return lr_at(epoch, self.base_lr, self.decay_factor, self.decay_every)


@dataclass(frozen=True)
class BatchRecord:
    step: int
    epoch: int
    batch: str
    loss: float
    kl: float
    cc: float
    nss: float
    lr: float

    def to_line(self) -> str:
        return "\t".join([str(self.step), str(self.epoch), self.batch] + [
            repr(v) for v in (self.loss, self.kl, self.cc, self.nss, self.lr)
        ])


@dataclass
class TrainResult:
    params: ModelParams
    model_config: ModelConfig
    best_epoch: int
    best_val_loss: float
    epochs_run: int
    stopped_early: bool
    records: list[BatchRecord] = field(default_factory=list)
    checkpoint: Optional[Path] = None


class TrainingLog:
    """Append-only tab-separated log, one line per batch."""

    def __init__(self, path: Optional[Path]):
        self.path = path
        self._handle: Optional[IO[str]] = None

    def __enter__(self) -> "TrainingLog":
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._handle = self.path.open("w", encoding="utf-8")
            self._handle.write("\t".join(LOG_HEADER) + "\n")
        return self

    def write(self, record: BatchRecord) -> None:
        if self._handle is not None:
            self._handle.write(record.to_line() + "\n")
            self._handle.flush()

    def __exit__(self, *exc) -> None:
        if self._handle is not None:
            self._handle.close()


# ---------------------------------------------------------------------------
# Batch stream
# ---------------------------------------------------------------------------

_DONE = object()


class BatchStream:
    """Ordered ``(kind, batch)`` pairs, optionally produced on a second thread.

    The producer draws every batch from one generator in a fixed order, so
    the sequence is the same with or without prefetching.
    """

    def __init__(self, source: Iterator[tuple[str, object]], prefetch: int = 0):
        self._source = source
        self._prefetch = prefetch
        self._queue: Optional[queue.Queue] = None
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None
        if prefetch > 0:
            self._queue = queue.Queue(maxsize=prefetch)
            self._thread = threading.Thread(target=self._produce, name="batch-prefetch", daemon=True)
            self._thread.start()

    def _put(self, item) -> bool:
        while not self._stop.is_set():
            try:
                self._queue.put(item, timeout=0.1)
                return True
            except queue.Full:
                continue
        return False

    def _produce(self) -> None:
        try:
            for item in self._source:
                if not self._put(item):
                    return
        except BaseException as e:  # forwarded to the consumer
            self._put(e)
            return
        self._put(_DONE)

    def __iter__(self) -> "BatchStream":
        return self

    def __next__(self) -> tuple[str, object]:
        if self._queue is None:
            return next(self._source)
        item = self._queue.get()
        if item is _DONE:
            raise StopIteration
        if isinstance(item, BaseException):
            raise item
        return item

    def close(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=5.0)


def _as_list(datasets: Optional[Datasets]) -> list[SaliencyDataset]:
    if datasets is None:
        return []
    return [datasets] if isinstance(datasets, SaliencyDataset) else list(datasets)


def batch_source(
    videos: Sequence[SaliencyDataset],
    statics: Sequence[SaliencyDataset],
    items: list,
    config: TrainConfig,
    rng: np.random.Generator,
    *,
    with_images: bool,
) -> Iterator[tuple[str, object]]:
    for _ in range(config.epochs * config.steps_per_epoch):
        yield "video", sample_video_batch(videos, rng, length=config.clip_length, factor=DOWNSAMPLING)
        if with_images:
            for _ in range(config.image_ratio):
                yield "image", sample_image_batch(
                    statics, rng, batch_size=config.image_batch_size, factor=DOWNSAMPLING, items=items,
                )


# ---------------------------------------------------------------------------
# Steps
# ---------------------------------------------------------------------------

def _check_finite(loss: Tensor, what: str) -> float:
    value = loss.item()
    if not math.isfinite(value):
        raise NumericalError(f"{what} loss is not finite ({value})")
    return value


def _excluding(params: ModelParams, *prefixes: str) -> dict[str, Tensor]:
    return params.except_group(*prefixes) if prefixes else dict(params)


def video_step(
    params: ModelParams,
    model_config: ModelConfig,
    clip: Clip,
    state: OptimState,
    lr: float,
    weights: LossWeights,
    *,
    freeze_encoder: bool = False,
) -> LossTerms:
    params.zero_grad()
    out = forward_sequence(clip.frames, params, model_config)
    terms = sequence_terms(out.saliency, clip.fixation_maps, clip.distributions, weights)
    loss = terms.combine(weights)
    _check_finite(loss, "video")
    loss.backward()
    frozen = (ENCODER_PREFIX,) if freeze_encoder else ()
    adam_step(_excluding(params, *frozen), None, state, lr)
    return terms


def image_step(
    params: ModelParams,
    model_config: ModelConfig,
    batch: ImageBatch,
    state: OptimState,
    lr: float,
    weights: LossWeights,
    *,
    freeze_encoder: bool = False,
) -> LossTerms:
    """Attention-only update; recurrent and readout parameters are not stepped."""
    params.zero_grad()
    maps = [attend_frame(Tensor(image), params, model_config)[1] for image in batch.images]
    terms = sequence_terms(maps, batch.fixation_maps, batch.distributions, weights)
    loss = terms.combine(weights)
    _check_finite(loss, "image")
    loss.backward()
    masked = RECURRENT_PREFIXES + ((ENCODER_PREFIX,) if freeze_encoder else ())
    adam_step(_excluding(params, *masked), None, state, lr)
    return terms


def validation_ids(datasets: Sequence[SaliencyDataset]) -> list[tuple[str, ...]]:
    """Validation videos per dataset, or the training videos when none exist."""
    ids = [tuple(ds.split.val) for ds in datasets]
    if not any(ids):
        logger.warning("no validation videos; validating on the training videos")
        ids = [tuple(ds.split.train) for ds in datasets]
    return ids


def _validation_clips(
    datasets: Sequence[SaliencyDataset],
    video_ids: Sequence[Sequence[str]],
    length: int,
) -> list[Clip]:
    clips = []
    for ds, ids in zip(datasets, video_ids):
        for vid in ids:
            n = min(length, ds.frame_counts[vid])
            clips.append(ds.clip(vid, 0, n, DOWNSAMPLING))
    return clips


def validation_loss(
    params: ModelParams,
    model_config: ModelConfig,
    clips: Sequence[Clip],
    weights: LossWeights,
) -> float:
    """Mean video loss over validation clips that carry ground truth."""
    losses = []
    with no_grad():
        for clip in clips:
            out = forward_sequence(clip.frames, params, model_config)
            try:
                value = video_loss(out.saliency, clip.fixation_maps, clip.distributions, weights)
            except NoFixationError:
                continue
            losses.append(value.item())
    if not losses:
        raise DataError("no validation clip carries fixations")
    return float(np.mean(losses))


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

def _check_sizes(model_config: ModelConfig, datasets: Sequence[SaliencyDataset]) -> None:
    side = model_config.input_size
    for ds in datasets:
        if ds.size != (side, side):
            raise ConfigurationError(
                f"dataset {ds.root} has {ds.size[0]}x{ds.size[1]} frames, model input_size is {side}"
            )


def _record(step: int, epoch: int, kind: str, terms: LossTerms, weights: LossWeights, lr: float) -> BatchRecord:
    values = terms.values()
    with no_grad():
        loss = terms.combine(weights).item()
    return BatchRecord(step, epoch, kind, loss, values["kl"], values["cc"], values["nss"], lr)


def train(
    model_config: ModelConfig,
    videos: Datasets,
    static: Optional[Datasets],
    config: TrainConfig,
    *,
    params: Optional[ModelParams] = None,
    out_dir: Optional[Path | str] = None,
) -> TrainResult:
    """Train and return the parameters of the best validation epoch.

    With ``out_dir`` the best checkpoint and ``train.log`` are written
    there; on divergence the last good parameters are saved before the
    ``NumericalError`` propagates.
    """
    video_sets = _as_list(videos)
    static_sets = _as_list(static)
    if not video_sets:
        raise DataError("training needs at least one video dataset")
    _check_sizes(model_config, video_sets + static_sets)
    out = Path(out_dir) if out_dir is not None else None

    video_sets = [dataclasses.replace(ds, split=carve_validation(ds.split, config.seed)) for ds in video_sets]
    val_ids = validation_ids(video_sets)
    val_clips = _validation_clips(video_sets, val_ids, config.clip_length)

    # A static set sharing a root with a video set draws from its carved train split.
    carved = {ds.root.resolve(): ds.split for ds in video_sets}
    static_sets = [
        dataclasses.replace(ds, split=carved[ds.root.resolve()]) if ds.root.resolve() in carved else ds
        for ds in static_sets
    ]
    items =static_items(static_sets, fraction=config.static_fraction, seed=config.seed) if static_sets else []
    with_images = bool(items) and model_config.attention and config.image_ratio > 0
    if static_sets and not items:
        logger.warning("static datasets have no fixated training images; image batches disabled")

    if params is None:
        params = init_params(model_config, config.seed)
    weights = config.loss_weights
    state = OptimState.for_params(params, beta1=config.beta1, beta2=config.beta2, eps=config.adam_eps)
    sampler_rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(1)[0])
    stream = BatchStream(
        batch_source(video_sets, static_sets, items, config, sampler_rng, with_images=with_images),
        config.prefetch,
    )

    best_loss, best_epoch, best_arrays = math.inf, -1, params.arrays()
    records: list[BatchRecord] = []
    step, epochs_run, bad_epochs, stopped_early = 0, 0, 0, False
    log_path = out / LOG_FILE if out is not None else None
    try:
        with TrainingLog(log_path) as log:
            for epoch in range(config.epochs):
                lr = config.lr(epoch)
                batches_per_epoch = config.steps_per_epoch * (1 + (config.image_ratio if with_images else 0))
                for _ in range(batches_per_epoch):
                    kind, batch = next(stream)
                    good = params.arrays()
                    try:
                        if kind == "video":
                            terms = video_step(params, model_config, batch, state, lr, weights,
                                               freeze_encoder=config.freeze_encoder)
                        else:
                            terms = image_step(params, model_config, batch, state, lr, weights,
                                               freeze_encoder=config.freeze_encoder)
                    except NumericalError:
                        if out is not None:
                            params.load_arrays(good)
                            save_checkpoint(out, model_config, params)
                            logger.error("training diverged at step %d; saved last good parameters to %s", step, out)
                        raise
                    step += 1
                    record = _record(step, epoch, kind, terms, weights, lr)
                    records.append(record)
                    log.write(record)

                val = validation_loss(params, model_config, val_clips, weights)
                epochs_run = epoch + 1
                val_record = BatchRecord(step, epoch, "val", val, math.nan, math.nan, math.nan, lr)
                records.append(val_record)
                log.write(val_record)
                logger.info("epoch %d: lr %g, validation loss %.6f", epoch, lr, val)
                if val < best_loss:
                    best_loss, best_epoch, best_arrays = val, epoch, params.arrays()
                    bad_epochs = 0
                else:
                    bad_epochs += 1
                    if bad_epochs >= config.patience:
                        logger.info("early stop after epoch %d (best epoch %d)", epoch, best_epoch)
                        stopped_early = True
                        break
    finally:
        stream.close()

    params.load_arrays(best_arrays)
    checkpoint = save_checkpoint(out, model_config, params) if out is not None else None
    return TrainResult(
        params=params,
        model_config=model_config,
        best_epoch=best_epoch,
        best_val_loss=best_loss,
        epochs_run=epochs_run,
        stopped_early=stopped_early,
        records=records,
        checkpoint=checkpoint,
    )


# ---------------------------------------------------------------------------
# Scoring helpers used by ablation runs
# ---------------------------------------------------------------------------

def dataset_nss(
    maps_for: Callable[[SaliencyDataset, str], Sequence[np.ndarray]],
    datasets: Sequence[SaliencyDataset],
    video_ids: Sequence[Sequence[str]],
) -> float:
    """Mean full-resolution NSS over fixated frames; ``maps_for(ds, vid)``
    returns one map per frame."""
    scores = []
    for ds, ids in zip(datasets, video_ids):
        for vid in ids:
            for t, y in enumerate(maps_for(ds, vid)):
                p, _ = ds.ground_truth(vid, t)
                if p.any():
                    scores.append(nss_metric(y, p))
    if not scores:
        raise DataError("no fixated frames to score")
    return float(np.mean(scores))


def model_nss(
    params: ModelParams,
    model_config: ModelConfig,
    datasets: Sequence[SaliencyDataset],
    video_ids: Sequence[Sequence[str]],
) -> float:
    def maps_for(ds: SaliencyDataset, vid: str):
        return predict_maps(ds.load_frames(vid, 0, ds.frame_counts[vid]), params, model_config)

    return dataset_nss(maps_for, datasets, video_ids)


def center_bias_nss(
    datasets: Sequence[SaliencyDataset],
    video_ids: Sequence[Sequence[str]],
) -> float:
    """NSS of the average-annotation map of the scored videos themselves."""
    records = [
        r for ds, ids in zip(datasets, video_ids) for vid in ids
        for t in range(ds.frame_counts[vid]) for r in ds.records(vid, t)
    ]
    bias = center_bias_map(records, datasets[0].size, datasets[0].info.blur_sigma)

    def maps_for(ds: SaliencyDataset, vid: str):
        return [bias] * ds.frame_counts[vid]

    return dataset_nss(maps_for, datasets, video_ids)
