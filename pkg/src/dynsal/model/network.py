"""Forward pass: encoder, attention branch, enhancement, convLSTM, readout.

Every function takes the named parameter mapping from
``dynsal.model.params`` and is built only from ``dynsal.tensor`` ops, so
the same code serves inference (under ``no_grad``) and training.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from dynsal.errors import ConfigurationError, DimensionError
from dynsal.model.params import (
    ATTENTION_POOLING,
    DOWNSAMPLING,
    POOLED_BLOCKS,
    ModelConfig,
)
from dynsal.tensor import (
    Tensor,
    add,
    conv2d,
    hadamard,
    max_pool2d,
    no_grad,
    relu,
    reshape,
    sigmoid,
    stack,
    tanh,
    upsample_bilinear,
)
from dynsal.tensor.ops import add_scalar, constant

logger = logging.getLogger(__name__)

Params = Mapping[str, Tensor]
PREDICTION_SOURCES = ("saliency", "attention")
Frames = Union[np.ndarray, Tensor, Sequence[Tensor], Sequence[np.ndarray]]


@dataclass
class ConvLSTMState:
    hidden: Tensor
    cell: Tensor

    @classmethod
    def zeros(cls, side: int, channels: int) -> "ConvLSTMState":
        return cls(
            hidden=Tensor(np.zeros((side, side, channels))),
            cell=Tensor(np.zeros((side, side, channels))),
        )

    def detach(self) -> "ConvLSTMState":
        return ConvLSTMState(self.hidden.detach(), self.cell.detach())


@dataclass
class GateMaps:
    input: Tensor
    forget: Tensor
    output: Tensor


@dataclass
class SequenceOutput:
    """Per-frame predictions of one clip.

    ``saliency`` and ``attention`` hold ``[h, w, 1]`` tensors, one per
    frame. ``state`` is the recurrent state after the last frame (``None``
    for the non-recurrent variant).
    """

    saliency: list[Tensor]
    attention: list[Tensor]
    state: Optional[ConvLSTMState]

    def saliency_maps(self) -> Tensor:
        """``[T, h, w]`` stack of the dynamic saliency maps."""
        return stack([reshape(y, y.shape[:2]) for y in self.saliency])

    def attention_maps(self) -> Tensor:
        return stack([reshape(m, m.shape[:2]) for m in self.attention])


def encode(frame: Tensor, params: Params, config: ModelConfig) -> Tensor:
    """``[S, S, 3]`` frame to ``[S/8, S/8, Cf]`` features."""
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise DimensionError(f"encode expects an [S, S, 3] frame, got {frame.shape}")
    side = frame.shape[0]
    if frame.shape[1] != side:
        raise DimensionError(f"encode expects a square frame, got {frame.shape}")
    encoder = config.encoder
    if side % encoder.downsampling:
        raise ConfigurationError(f"frame side {side} is not divisible by {encoder.downsampling}")

    x = frame
    for n in range(1, len(encoder.widths) + 1):
        x = relu(conv2d(
            x, params[f"encoder.conv{n}.kernel"], params[f"encoder.conv{n}.bias"], padding=1,
        ))
        if n <= POOLED_BLOCKS:
            x = max_pool2d(x, 2, 2)
    return x


def attention_branch(X: Tensor, params: Params, config: ModelConfig) -> tuple[Tensor, Tensor]:
    """Returns the coarse pre-upsampling map and the full-size ``M``."""
    h, w = X.shape[:2]
    pooling = config.attention_pooling
    if pooling and (h % ATTENTION_POOLING or w % ATTENTION_POOLING):
        raise ConfigurationError(
            f"attention input {h}x{w} is not divisible by the pooling factor {ATTENTION_POOLING}"
        )
    a = relu(conv2d(X, params["attention.conv1.kernel"], params["attention.conv1.bias"], padding=1))
    if pooling:
        a = max_pool2d(a, 2, 2)
    a = relu(conv2d(a, params["attention.conv2.kernel"], params["attention.conv2.bias"], padding=1))
    if pooling:
        a = max_pool2d(a, 2, 2)
    coarse = sigmoid(conv2d(a, params["attention.score.kernel"], params["attention.score.bias"]))
    if not pooling:
        return coarse, coarse
    return coarse, upsample_bilinear(coarse, ATTENTION_POOLING)


def attention_forward(X: Tensor, params: Params, config: ModelConfig) -> Tensor:
    """Attention map ``M`` in ``[0, 1]`` with X's spatial size and one channel."""
    if X.ndim != 3:
        raise DimensionError(f"attention expects [h, w, Cf] features, got {X.shape}")
    return attention_branch(X, params, config)[1]


def enhance(X: Tensor, M: Tensor, residual: bool = True) -> Tensor:
    if X.ndim != 3 or M.shape != X.shape[:2] + (1,):
        raise DimensionError(f"enhance: attention {M.shape} does not match features {X.shape}")
    if residual:
        return hadamard(X, add_scalar(M, 1.0))
    return hadamard(X, M)


def _gate_preactivation(xhat: Tensor, hidden: Tensor, params: Params, gate: str) -> Tensor:
    zx = conv2d(xhat, params[f"lstm.W_x{gate}"], params[f"lstm.b_{gate}"], padding=1)
    zh = conv2d(hidden, params[f"lstm.W_h{gate}"], padding=1)
    return add(zx, zh)


def convlstm_step(
    xhat: Tensor,
    state: ConvLSTMState,
    params: Params,
    *,
    gates: Optional[list[GateMaps]] = None,
) -> tuple[Tensor, Tensor]:
    """One peephole convLSTM update; returns ``(H_t, C_t)``.

    The input and forget gates peek at ``C_{t-1}``, the output gate at the
    updated ``C_t``. Pass a list as ``gates`` to collect the gate maps.
    """
    h_prev, c_prev = state.hidden, state.cell
    if h_prev.shape != c_prev.shape:
        raise DimensionError(f"state hidden {h_prev.shape} and cell {c_prev.shape} differ")
    if xhat.ndim != 3 or xhat.shape[:2] != h_prev.shape[:2]:
        raise DimensionError(f"convlstm input {xhat.shape} does not match state {h_prev.shape}")
    if params["lstm.W_ci"].shape != c_prev.shape:
        raise DimensionError(
            f"peephole maps {params['lstm.W_ci'].shape} do not match state {c_prev.shape}"
        )

    i = sigmoid(add(_gate_preactivation(xhat, h_prev, params, "i"), hadamard(params["lstm.W_ci"], c_prev)))
    f = sigmoid(add(_gate_preactivation(xhat, h_prev, params, "f"), hadamard(params["lstm.W_cf"], c_prev)))
    candidate = tanh(_gate_preactivation(xhat, h_prev, params, "c"))
    c = add(hadamard(f, c_prev), hadamard(i, candidate))
    o = sigmoid(add(_gate_preactivation(xhat, h_prev, params, "o"), hadamard(params["lstm.W_co"], c)))
    h = hadamard(o, tanh(c))
    if gates is not None:
        gates.append(GateMaps(input=i, forget=f, output=o))
    return h, c


def readout(H: Tensor, params: Params) -> Tensor:
    """1x1 convolution to one channel, then sigmoid."""
    return sigmoid(conv2d(H, params["readout.kernel"], params["readout.bias"]))


def _frame_list(frames: Frames) -> list[Tensor]:
    if isinstance(frames, Tensor):
        frames = frames.data
    if isinstance(frames, np.ndarray):
        if frames.ndim != 4:
            raise DimensionError(f"expected [T, S, S, 3] frames, got {frames.shape}")
        return [Tensor(f) for f in frames]
    return [f if isinstance(f, Tensor) else Tensor(f) for f in frames]


def attend_frame(frame: Tensor, params: Params, config: ModelConfig) -> tuple[Tensor, Tensor]:
    """Encoder plus attention for one frame: ``(X, M)``.

    With attention disabled ``M`` is all zeros.
    """
    X = encode(frame, params, config)
    if config.attention:
        M = attention_forward(X, params, config)
    else:
        M = constant(0.0, X.shape[:2] + (1,))
    return X, M


def forward_sequence(
    frames: Frames,
    params: Params,
    config: ModelConfig,
    initial_state: Optional[ConvLSTMState] = None,
) -> SequenceOutput:
    """Run a clip through the full model, threading the recurrent state."""
    frame_list = _frame_list(frames)
    if not frame_list:
        raise DimensionError("forward_sequence needs at least one frame")

    state = None
    if config.recurrent:
        state = initial_state or ConvLSTMState.zeros(config.feature_size, config.hidden_channels)

    saliency: list[Tensor] = []
    attention: list[Tensor] = []
    for frame in frame_list:
        X, M = attend_frame(frame, params, config)
        xhat = enhance(X, M, config.residual) if config.attention else X
        if state is not None:
            h, c = convlstm_step(xhat, state, params)
            state = ConvLSTMState(h, c)
            saliency.append(readout(h, params))
        else:
            saliency.append(readout(xhat, params))
        attention.append(M)
    logger.debug("forward_sequence: %d frames -> %s maps", len(frame_list), saliency[0].shape)
    return SequenceOutput(saliency=saliency, attention=attention, state=state)


def receptive_field(layers: Sequence[tuple[int, int]]) -> int:
    """Receptive field of a stack of ``(kernel, stride)`` layers."""
    field, jump = 1, 1
    for kernel, stride in layers:
        field += (kernel - 1) * jump
        jump *= stride
    return field


def encoder_layers(config: ModelConfig) -> list[tuple[int, int]]:
    layers: list[tuple[int, int]] = []
    for n in range(1, len(config.encoder.widths) + 1):
        layers.append((3, 1))
        if n <= POOLED_BLOCKS:
            layers.append((2, 2))
    return layers


def attention_layers(config: ModelConfig) -> list[tuple[int, int]]:
    """Encoder stack followed by the branch layers up to the coarse map."""
    branch = [(3, 1), (2, 2), (3, 1), (2, 2), (1, 1)] if config.attention_pooling else [(3, 1), (3, 1), (1, 1)]
    return encoder_layers(config) + branch


def predict_maps(
    frames: np.ndarray,
    params: Params,
    config: ModelConfig,
    *,
    source: str = "saliency",
) -> list[np.ndarray]:
    """Inference on ``[T, S, S, 3]`` frames in [0, 1].

    Returns one ``[S, S]`` map per frame, upsampled from feature resolution;
    ``source="attention"`` returns the attention maps instead.
    """
    if source not in PREDICTION_SOURCES:
        raise ConfigurationError(f"source must be one of {PREDICTION_SOURCES}, got {source!r}")
    with no_grad():
        out = forward_sequence(frames, params, config)
        maps = out.saliency if source == "saliency" else out.attention
        return [upsample_bilinear(m, DOWNSAMPLING).data[..., 0] for m in maps]
