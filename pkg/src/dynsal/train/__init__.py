"""Optimization: Adam, learning-rate schedule and the alternating training loop."""
from dynsal.train.optim import OptimState, adam_step, lr_at
from dynsal.train.trainer import (
    BatchRecord,
    BatchStream,
    TrainConfig,
    TrainResult,
    center_bias_nss,
    image_step,
    model_nss,
    train,
    validation_ids,
    validation_loss,
    video_step,
)

__all__ = [
    "BatchRecord",
    "BatchStream",
    "OptimState",
    "TrainConfig",
    "TrainResult",
    "adam_step",
    "center_bias_nss",
    "image_step",
    "lr_at",
    "model_nss",
    "train",
    "validation_ids",
    "validation_loss",
    "video_step",
]
