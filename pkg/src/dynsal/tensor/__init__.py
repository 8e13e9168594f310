"""Minimal dense-tensor engine with reverse-mode gradients."""
from dynsal.tensor.core import GradTape, Tensor, grad_enabled, no_grad
from dynsal.tensor.ops import (
    add,
    add_scalar,
    apply_activation,
    clamp_min,
    conv2d,
    div,
    hadamard,
    log,
    max_pool2d,
    mean,
    mul_scalar,
    relu,
    reshape,
    sigmoid,
    sqrt,
    stack,
    sub,
    tanh,
    total,
    upsample_bilinear,
)

__all__ = [
    "GradTape",
    "Tensor",
    "add",
    "add_scalar",
    "apply_activation",
    "clamp_min",
    "conv2d",
    "div",
    "grad_enabled",
    "hadamard",
    "log",
    "max_pool2d",
    "mean",
    "mul_scalar",
    "no_grad",
    "relu",
    "reshape",
    "sigmoid",
    "sqrt",
    "stack",
    "sub",
    "tanh",
    "total",
    "upsample_bilinear",
]
