"""STNS binary tensor files.

Layout (all integers little-endian)::

    bytes 0..3   magic  b"STNS"
    byte  4      version (u8) = 1
    byte  5      ndim (u8), >= 1
    ndim x u32   dimensions, row-major order
    payload      float32 values, row-major

Parameters, predictions, ground-truth maps and frames all use it. Arrays are
decoded back to float64.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from dynsal.errors import DataError

MAGIC = b"STNS"
VERSION = 1
SUFFIX = ".stns"


def encode_stns(array: np.ndarray) -> bytes:
    arr = np.asarray(array)
    if arr.ndim < 1 or arr.ndim > 255:
        raise DataError(f"STNS supports 1..255 dimensions, got {arr.ndim}")
    if arr.size == 0:
        raise DataError(f"STNS dimensions must be positive, got {arr.shape}")
    header = MAGIC + struct.pack("<BB", VERSION, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return header + payload


def decode_stns(data: bytes, *, source: str = "<bytes>") -> np.ndarray:
    if len(data) < 6 or data[:4] != MAGIC:
        raise DataError(f"{source} is not an STNS tensor (bad magic bytes)")
    version, ndim = struct.unpack("<BB", data[4:6])
    if version != VERSION:
        raise DataError(f"{source}: unsupported STNS version {version}")
    if ndim < 1:
        raise DataError(f"{source}: STNS ndim must be >= 1")
    dims_end = 6 + 4 * ndim
    if len(data) < dims_end:
        raise DataError(f"{source}: truncated STNS header")
    shape = struct.unpack(f"<{ndim}I", data[6:dims_end])
    if any(d == 0 for d in shape):
        raise DataError(f"{source}: STNS dimensions must be positive, got {shape}")
    expected = int(np.prod(shape)) * 4
    payload = data[dims_end:]
    if len(payload) != expected:
        raise DataError(
            f"{source}: STNS payload has {len(payload)} bytes, shape {shape} needs {expected}"
        )
    return np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(shape)


def write_stns(path: Path | str, array: np.ndarray) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_bytes(encode_stns(array))
    return p


def read_stns(path: Path | str) -> np.ndarray:
    p = Path(path)
    try:
        data = p.read_bytes()
    except OSError as e:
        raise DataError(f"cannot read tensor file: {e}") from e
    return decode_stns(data, source=str(p))
