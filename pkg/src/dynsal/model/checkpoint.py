"""Parameter checkpoints.

A checkpoint is a directory::

    model.cfg          ModelConfig as key = value lines
    params.manifest    one "name<TAB>shape<TAB>file" line per parameter
    <name>.stns        one STNS tensor per parameter

Manifest lines are written in parameter order, so saving the same
parameters twice gives byte-identical directories.
"""
from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from dynsal import config as cfg
from dynsal.errors import DataError, UsageError
from dynsal.model.params import ModelConfig, ModelParams, parameter_shapes
from dynsal.tensor import Tensor
from dynsal.tensor.codec import SUFFIX, read_stns, write_stns

logger = logging.getLogger(__name__)

CONFIG_FILE = "model.cfg"
MANIFEST_FILE = "params.manifest"


def save_checkpoint(directory: Path | str, config: ModelConfig, params: ModelParams) -> Path:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    (out / CONFIG_FILE).write_text("\n".join(cfg.dump(config)) + "\n", encoding="utf-8")
    lines = []
    for name, tensor in params.items():
        filename = name + SUFFIX
        write_stns(out / filename, tensor.data)
        shape = ",".join(str(d) for d in tensor.shape)
        lines.append(f"{name}\t{shape}\t{filename}")
    (out / MANIFEST_FILE).write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info("saved %d parameters to %s", len(lines), out)
    return out


def _read_manifest(path: Path) -> list[tuple[str, tuple[int, ...], str]]:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot read checkpoint manifest: {e}") from e
    entries = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        parts = raw.split("\t")
        if len(parts) != 3:
            raise DataError(f"{path}:{lineno}: expected name<TAB>shape<TAB>file")
        name, shape_text, filename = parts
        try:
            shape = tuple(int(d) for d in shape_text.split(","))
        except ValueError as e:
            raise DataError(f"{path}:{lineno}: bad shape {shape_text!r}") from e
        entries.append((name, shape, filename))
    return entries


def load_checkpoint(directory: Path | str, *, requires_grad: bool = False) -> tuple[ModelConfig, ModelParams]:
    """Load and validate a checkpoint against the shapes its config implies."""
    src = Path(directory)
    if not src.is_dir():
        raise UsageError(f"checkpoint directory not found: {src}")
    config_path = src / CONFIG_FILE
    if not config_path.is_file():
        raise DataError(f"{src} has no {CONFIG_FILE}")
    (config,) = cfg.load_config(config_path, ModelConfig)

    expected = parameter_shapes(config)
    entries = _read_manifest(src / MANIFEST_FILE)
    names = [name for name, _, _ in entries]
    missing = sorted(set(expected) - set(names))
    unknown = sorted(set(names) - set(expected))
    if missing or unknown:
        raise DataError(
            f"checkpoint {src} does not match its model config "
            f"(missing: {missing or 'none'}, unexpected: {unknown or 'none'})"
        )

    tensors: dict[str, Tensor] = {}
    for name, shape, filename in entries:
        if shape != expected[name]:
            raise DataError(f"checkpoint parameter {name} has shape {shape}, model needs {expected[name]}")
        data = read_stns(src / filename)
        if data.shape != shape:
            raise DataError(f"{filename} holds shape {data.shape}, manifest says {shape}")
        if not np.all(np.isfinite(data)):
            raise DataError(f"checkpoint parameter {name} contains non-finite values")
        tensors[name] = Tensor(data, requires_grad=requires_grad)
    ordered = {name: tensors[name] for name in expected}
    logger.debug("loaded %d parameters from %s", len(ordered), src)
    return config, ModelParams(ordered)
