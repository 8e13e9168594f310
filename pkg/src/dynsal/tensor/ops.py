"""Differentiable operations on channels-last tensors.

Spatial ops take ``[H, W, C]`` inputs. Binary elementwise ops accept two
operands of identical shape, a right operand that is a single-channel map
``[H, W, 1]`` spread over the channels of a ``[H, W, C]`` left operand, or
a single-element right operand. Nothing else broadcasts.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from dynsal.errors import ConfigurationError, DimensionError, NumericalError
from dynsal.tensor.core import Tensor, make_result

ACTIVATIONS = ("sigmoid", "tanh", "relu")


def _require_ndim(t: Tensor, ndim: int, what: str) -> None:
    if t.ndim != ndim:
        raise DimensionError(f"{what} expects a {ndim}-d tensor, got shape {t.shape}")


# ---------------------------------------------------------------------------
# Convolution, pooling, upsampling
# ---------------------------------------------------------------------------

def conv2d(
    x: Tensor,
    kernel: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """Zero-padded 2-D cross-correlation: ``[H,W,Cin] * [k,k,Cin,Cout] -> [H',W',Cout]``."""
    _require_ndim(x, 3, "conv2d input")
    _require_ndim(kernel, 4, "conv2d kernel")
    h, w, cin = x.shape
    k, k2, kcin, cout = kernel.shape
    if k != k2:
        raise DimensionError(f"conv2d kernel must be square, got {kernel.shape}")
    if kcin != cin:
        raise DimensionError(f"conv2d kernel expects {kcin} input channels, input has {cin}")
    if bias is not None and bias.shape != (cout,):
        raise DimensionError(f"conv2d bias must have shape ({cout},), got {bias.shape}")
    if stride < 1 or padding < 0:
        raise DimensionError(f"conv2d needs stride >= 1 and padding >= 0 (got {stride}, {padding})")
    if k > h + 2 * padding or k > w + 2 * padding:
        raise DimensionError(f"conv2d kernel {k} exceeds padded input {h}x{w} (+{padding})")

    p = padding
    xp = np.pad(x.data, ((p, p), (p, p), (0, 0))) if p else x.data
    windows = sliding_window_view(xp, (k, k), axis=(0, 1))[::stride, ::stride]
    ho, wo = windows.shape[:2]
    out = np.tensordot(windows, kernel.data.transpose(2, 0, 1, 3), axes=([2, 3, 4], [0, 1, 2]))
    if bias is not None:
        out = out + bias.data

    def backward(g: np.ndarray):
        gx = gk = gb = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    gxp[i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride, :] += (
                        g @ kernel.data[i, j].T
                    )
            gx = gxp[p:p + h, p:p + w, :] if p else gxp
        if kernel.requires_grad:
            gk = np.tensordot(windows, g, axes=([0, 1], [0, 1])).transpose(1, 2, 0, 3)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 1))
        return (gx, gk, gb)

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return make_result(out, parents, backward, "conv2d")


def max_pool2d(x: Tensor, window: int, stride: int) -> Tensor:
    """Window maximum; the gradient goes to the first row-major maximal cell."""
    _require_ndim(x, 3, "max_pool2d input")
    h, w, c = x.shape
    if window < 1 or stride < 1:
        raise DimensionError(f"max_pool2d needs positive window and stride (got {window}, {stride})")
    if window > h or window > w:
        raise DimensionError(f"max_pool2d window {window} exceeds input {h}x{w}")

    windows = sliding_window_view(x.data, (window, window), axis=(0, 1))[::stride, ::stride]
    ho, wo = windows.shape[:2]
    flat = windows.reshape(ho, wo, c, window * window)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward(g: np.ndarray):
        rows = np.arange(ho)[:, None, None] * stride + arg // window
        cols = np.arange(wo)[None, :, None] * stride + arg % window
        chans = np.broadcast_to(np.arange(c)[None, None, :], arg.shape)
        gx = np.zeros_like(x.data)
        np.add.at(gx, (rows, cols, chans), g)
        return (gx,)

    return make_result(out, (x,), backward, "max_pool2d")


def interpolation_matrix(n: int, factor: int) -> np.ndarray:
    """Corner-aligned linear interpolation weights from ``n`` to ``n*factor`` samples."""
    m = n * factor
    a = np.zeros((m, n))
    if n == 1:
        a[:, 0] = 1.0
        return a
    pos = np.arange(m) * (n - 1) / (m - 1)
    lo = np.minimum(np.floor(pos).astype(int), n - 2)
    t = pos - lo
    rows = np.arange(m)
    a[rows, lo] = 1.0 - t
    a[rows, lo + 1] += t
    return a


def upsample_bilinear(x: Tensor, factor: int) -> Tensor:
    """Bilinear ``factor``x upsampling with corner alignment; factor 1 copies."""
    _require_ndim(x, 3, "upsample_bilinear input")
    if factor < 1:
        raise DimensionError(f"upsample factor must be >= 1, got {factor}")
    if factor == 1:
        return make_result(x.data.copy(), (x,), lambda g: (g,), "upsample_bilinear")

    ah = interpolation_matrix(x.shape[0], factor)
    aw = interpolation_matrix(x.shape[1], factor)
    out = np.einsum("ih,hwc,jw->ijc", ah, x.data, aw, optimize=True)

    def backward(g: np.ndarray):
        return (np.einsum("ih,ijc,jw->hwc", ah, g, aw, optimize=True),)

    return make_result(out, (x,), backward, "upsample_bilinear")


# ---------------------------------------------------------------------------
# Activations
# ---------------------------------------------------------------------------

def sigmoid(x: Tensor) -> Tensor:
    out = expit(x.data)
    return make_result(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return make_result(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, 0.0)
    return make_result(out, (x,), lambda g: (g * mask,), "relu")


def apply_activation(x: Tensor, kind: str) -> Tensor:
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return tanh(x)
    if kind == "relu":
        return relu(x)
    raise ConfigurationError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


# ---------------------------------------------------------------------------
# Elementwise binary ops
# ---------------------------------------------------------------------------

def _pairing(a: Tensor, b: Tensor, op: str) -> str:
    if a.shape == b.shape:
        return "same"
    if b.size == 1:
        return "scalar"
    if a.ndim >= 2 and b.shape == a.shape[:-1] + (1,):
        return "channel"
    raise DimensionError(f"{op}: cannot combine shapes {a.shape} and {b.shape}")


def _reduce_like(g: np.ndarray, pairing: str, shape: tuple[int, ...]) -> np.ndarray:
    if pairing == "same":
        return g
    if pairing == "channel":
        return g.sum(axis=-1, keepdims=True)
    return np.asarray(g.sum()).reshape(shape)


def _rhs(b: Tensor, pairing: str) -> np.ndarray:
    return b.data.reshape(()) if pairing == "scalar" else b.data


def add(a: Tensor, b: Tensor) -> Tensor:
    pairing = _pairing(a, b, "add")
    out = a.data + _rhs(b, pairing)
    return make_result(
        out, (a, b), lambda g: (g, _reduce_like(g, pairing, b.shape)), "add",
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    pairing = _pairing(a, b, "sub")
    out = a.data - _rhs(b, pairing)
    return make_result(
        out, (a, b), lambda g: (g, -_reduce_like(g, pairing, b.shape)), "sub",
    )


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; ``b`` may be a single-channel map over ``a``'s channels."""
    pairing = _pairing(a, b, "hadamard")
    bv = _rhs(b, pairing)
    out = a.data * bv

    def backward(g: np.ndarray):
        return (g * bv, _reduce_like(g * a.data, pairing, b.shape))

    return make_result(out, (a, b), backward, "hadamard")


def div(a: Tensor, b: Tensor) -> Tensor:
    pairing = _pairing(a, b, "div")
    bv = _rhs(b, pairing)
    if np.any(bv == 0):
        raise NumericalError("div: division by zero")
    out = a.data / bv

    def backward(g: np.ndarray):
        return (g / bv, _reduce_like(-g * out / bv, pairing, b.shape))

    return make_result(out, (a, b), backward, "div")


# ---------------------------------------------------------------------------
# Unary and scalar ops
# ---------------------------------------------------------------------------

def add_scalar(a: Tensor, c: float) -> Tensor:
    return make_result(a.data + c, (a,), lambda g: (g,), "add_scalar")


def mul_scalar(a: Tensor, c: float) -> Tensor:
    return make_result(a.data * c, (a,), lambda g: (g * c,), "mul_scalar")


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise NumericalError("log: non-positive input")
    return make_result(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.data < 0):
        raise NumericalError("sqrt: negative input")
    out = np.sqrt(a.data)

    def backward(g: np.ndarray):
        positive = out > 0
        return (np.where(positive, g / (2.0 * np.where(positive, out, 1.0)), 0.0),)

    return make_result(out, (a,), backward, "sqrt")


def clamp_min(a: Tensor, lo: float) -> Tensor:
    keep = a.data >= lo
    out = np.where(keep, a.data, lo)
    return make_result(out, (a,), lambda g: (g * keep,), "clamp_min")


def total(a: Tensor) -> Tensor:
    """Sum of all elements as a ``(1,)`` tensor."""
    out = np.array([a.data.sum()])
    return make_result(out, (a,), lambda g: (np.full_like(a.data, g[0]),), "total")


def mean(a: Tensor) -> Tensor:
    n = a.size
    out = np.array([a.data.sum() / n])
    return make_result(out, (a,), lambda g: (np.full_like(a.data, g[0] / n),), "mean")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    out = a.data.reshape(shape)
    return make_result(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def stack(tensors: Sequence[Tensor]) -> Tensor:
    """Stack equal-shape tensors along a new leading axis."""
    if not tensors:
        raise DimensionError("stack needs at least one tensor")
    shape = tensors[0].shape
    for t in tensors:
        if t.shape != shape:
            raise DimensionError(f"stack: shape {t.shape} differs from {shape}")
    out = np.stack([t.data for t in tensors])
    return make_result(out, tuple(tensors), lambda g: tuple(g[i] for i in range(len(tensors))), "stack")


def constant(value, shape: Sequence[int]) -> Tensor:
    return Tensor(np.full(tuple(shape), float(value)))
