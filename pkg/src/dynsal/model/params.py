"""Model configuration and named parameters.

Parameter names follow the roles of the convLSTM equations:

    encoder.conv{1..5}.kernel / .bias      3x3 blocks, pooling after 1..3
    attention.conv{1,2}.kernel / .bias     3x3 branch layers
    attention.score.kernel / .bias         1x1 conv to one channel
    lstm.W_x{i,f,o,c}, lstm.W_h{i,f,o,c}   3x3 input / hidden kernels
    lstm.W_c{i,f,o}                        peephole maps (Hadamard)
    lstm.b_{i,f,o,c}                       gate biases
    readout.kernel / .bias                 1x1 conv to the saliency map
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Mapping

import numpy as np

from dynsal.errors import ConfigurationError
from dynsal.tensor import Tensor

DOWNSAMPLING = 8
POOLED_BLOCKS = 3
ATTENTION_POOLING = 4
LSTM_KERNEL = 3
FORGET_BIAS_INIT = 1.0
RECURRENT_PREFIXES = ("lstm.", "readout.")
GATES = ("i", "f", "o", "c")
PEEPHOLE_GATES = ("i", "f", "o")


@dataclass(frozen=True)
class EncoderConfig:
    widths: tuple[int, ...] = (16, 32, 64, 64, 64)
    input_size: int = 96
    downsampling: int = DOWNSAMPLING

    @property
    def feature_size(self) -> int:
        return self.input_size // self.downsampling

    @property
    def feature_channels(self) -> int:
        return self.widths[-1]


@dataclass(frozen=True)
class ModelConfig:
    """Geometry plus the ablation switches.

    ``attention`` off forces M to zero and feeds X unchanged to the
    recurrence; ``residual`` off uses M*X instead of (1+M)*X;
    ``attention_pooling`` off drops the branch's pooling and upsampling;
    ``recurrent`` off reads the saliency map straight from the enhanced
    features.
    """

    input_size: int = 96
    encoder_widths: tuple[int, ...] = (16, 32, 64, 64, 64)
    attention_widths: tuple[int, ...] = (32, 32)
    hidden_channels: int = 32
    attention: bool = True
    residual: bool = True
    attention_pooling: bool = True
    recurrent: bool = True

    def __post_init__(self) -> None:
        if self.input_size < DOWNSAMPLING or self.input_size % DOWNSAMPLING:
            raise ConfigurationError(
                f"input_size must be a positive multiple of {DOWNSAMPLING}, got {self.input_size}"
            )
        if len(self.encoder_widths) < POOLED_BLOCKS or min(self.encoder_widths) < 1:
            raise ConfigurationError(
                f"encoder needs at least {POOLED_BLOCKS} positive block widths, got {self.encoder_widths}"
            )
        if len(self.attention_widths) != 2 or min(self.attention_widths) < 1:
            raise ConfigurationError(
                f"attention branch needs two positive widths, got {self.attention_widths}"
            )
        if self.hidden_channels < 1:
            raise ConfigurationError("hidden_channels must be positive")
        if self.attention and self.attention_pooling and self.feature_size % ATTENTION_POOLING:
            raise ConfigurationError(
                f"feature side {self.feature_size} is not divisible by the attention "
                f"pooling factor {ATTENTION_POOLING}"
            )

    @property
    def encoder(self) -> EncoderConfig:
        return EncoderConfig(widths=self.encoder_widths, input_size=self.input_size)

    @property
    def feature_size(self) -> int:
        return self.encoder.feature_size

    @property
    def feature_channels(self) -> int:
        return self.encoder.feature_channels

    @property
    def readout_channels(self) -> int:
        return self.hidden_channels if self.recurrent else self.feature_channels


class ModelParams(Mapping[str, Tensor]):
    """Ordered name -> Tensor mapping with group helpers."""

    def __init__(self, tensors: Mapping[str, Tensor]):
        self._tensors = dict(tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def group(self, *prefixes: str) -> dict[str, Tensor]:
        return {n: t for n, t in self._tensors.items() if n.startswith(prefixes)}

    def except_group(self, *prefixes: str) -> dict[str, Tensor]:
        return {n: t for n, t in self._tensors.items() if not n.startswith(prefixes)}

    def zero_grad(self) -> None:
        for t in self._tensors.values():
            t.zero_grad()

    def arrays(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self._tensors.items()}

    def load_arrays(self, arrays: Mapping[str, np.ndarray]) -> None:
        for name, arr in arrays.items():
            self._tensors[name].data[...] = arr

    def frozen(self) -> "ModelParams":
        """Copies without gradient tracking, for inference."""
        return ModelParams({n: Tensor(t.data.copy()) for n, t in self._tensors.items()})

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {n: t.shape for n, t in self._tensors.items()}


def parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    cin = 3
    for n, width in enumerate(config.encoder_widths, start=1):
        shapes[f"encoder.conv{n}.kernel"] = (3, 3, cin, width)
        shapes[f"encoder.conv{n}.bias"] = (width,)
        cin = width
    cf = config.feature_channels
    if config.attention:
        a1, a2 = config.attention_widths
        shapes["attention.conv1.kernel"] = (3, 3, cf, a1)
        shapes["attention.conv1.bias"] = (a1,)
        shapes["attention.conv2.kernel"] = (3, 3, a1, a2)
        shapes["attention.conv2.bias"] = (a2,)
        shapes["attention.score.kernel"] = (1, 1, a2, 1)
        shapes["attention.score.bias"] = (1,)
    if config.recurrent:
        ch = config.hidden_channels
        side = config.feature_size
        for g in GATES:
            shapes[f"lstm.W_x{g}"] = (LSTM_KERNEL, LSTM_KERNEL, cf, ch)
            shapes[f"lstm.W_h{g}"] = (LSTM_KERNEL, LSTM_KERNEL, ch, ch)
            if g in PEEPHOLE_GATES:
                shapes[f"lstm.W_c{g}"] = (side, side, ch)
            shapes[f"lstm.b_{g}"] = (ch,)
    shapes["readout.kernel"] = (1, 1, config.readout_channels, 1)
    shapes["readout.bias"] = (1,)
    return shapes


def init_params(config: ModelConfig, seed: int = 0, *, requires_grad: bool = True) -> ModelParams:
    """He fan-in normal kernels, zero biases and peepholes, forget bias +1."""
    rng = np.random.default_rng(seed)
    tensors: dict[str, Tensor] = {}
    for name, shape in parameter_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "kernel" or leaf.startswith(("W_x", "W_h")):
            fan_in = shape[0] * shape[1] * shape[2]
            data = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
        elif name == "lstm.b_f":
            data = np.full(shape, FORGET_BIAS_INIT)
        else:
            data = np.zeros(shape)
        tensors[name] = Tensor(data, requires_grad=requires_grad)
    return ModelParams(tensors)
