"""Line-oriented ``key = value`` files mapped onto frozen dataclasses.

One format serves training configs, ``dataset.cfg``, checkpoint
``model.cfg`` and run manifests::

    # comment
    base_lr = 0.0001
    encoder_widths = 16, 32, 64, 64, 64
    residual = true

A run manifest carries the resolved config under ``config.``-prefixed keys
next to its own bookkeeping keys; ``load_config`` accepts either form.
"""
from __future__ import annotations

import dataclasses
import typing
from pathlib import Path
from typing import Any, Iterable, TypeVar

from dynsal.errors import UsageError

T = TypeVar("T")

MANIFEST_CONFIG_PREFIX = "config."
_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


def parse_key_values(text: str, *, path: str = "<string>") -> dict[str, tuple[str, int]]:
    """Return ``{key: (raw_value, line_number)}``; duplicate keys are rejected."""
    entries: dict[str, tuple[str, int]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"expected 'key = value', got {raw!r}", path=path, line=lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise UsageError("empty key", path=path, line=lineno)
        if key in entries:
            raise UsageError(f"duplicate key {key!r}", path=path, line=lineno)
        entries[key] = (value, lineno)
    return entries


def read_key_values(path: Path | str) -> dict[str, tuple[str, int]]:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as e:
        raise UsageError(f"cannot read config: {e}", path=str(p)) from e
    return parse_key_values(text, path=str(p))


def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ", ".join(format_value(v) for v in value)
    return str(value)


def dump(obj: Any, *, prefix: str = "") -> list[str]:
    """Render a dataclass instance as ``key = value`` lines in field order."""
    return [
        f"{prefix}{f.name} = {format_value(getattr(obj, f.name))}"
        for f in dataclasses.fields(obj)
    ]


def _coerce(raw: str, annotation: Any, *, key: str, path: str, line: int) -> Any:
    origin = typing.get_origin(annotation)
    try:
        if annotation is bool:
            lowered = raw.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if annotation is int:
            return int(raw)
        if annotation is float:
            return float(raw)
        if annotation is str:
            return raw
        if origin is tuple:
            (item_type, *_rest) = typing.get_args(annotation)
            items = [item.strip() for item in raw.split(",") if item.strip()]
            return tuple(item_type(item) for item in items)
    except ValueError as e:
        raise UsageError(f"bad value for {key!r}: {e}", path=path, line=line) from e
    raise UsageError(f"unsupported field type for {key!r}", path=path, line=line)


def build(cls: type[T], entries: dict[str, tuple[str, int]], *, path: str = "<string>") -> T:
    """Instantiate ``cls`` from parsed entries; missing keys keep defaults."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs: dict[str, Any] = {}
    for key, (raw, line) in entries.items():
        if key not in names:
            raise UsageError(f"unknown key {key!r}", path=path, line=line)
        kwargs[key] = _coerce(raw, hints[key], key=key, path=path, line=line)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise UsageError(str(e), path=path) from e


def _strip_manifest(entries: dict[str, tuple[str, int]]) -> dict[str, tuple[str, int]]:
    if "command" not in entries:
        return entries
    return {
        key[len(MANIFEST_CONFIG_PREFIX):]: value
        for key, value in entries.items()
        if key.startswith(MANIFEST_CONFIG_PREFIX)
    }


def split_entries(
    entries: dict[str, tuple[str, int]],
    classes: Iterable[type],
    *,
    path: str,
) -> list[dict[str, tuple[str, int]]]:
    """Partition entries by the dataclass that owns each key."""
    classes = list(classes)
    owned = [dict() for _ in classes]
    for key, value in entries.items():
        for i, cls in enumerate(classes):
            if key in {f.name for f in dataclasses.fields(cls)}:
                owned[i][key] = value
                break
        else:
            raise UsageError(f"unknown key {key!r}", path=path, line=value[1])
    return owned


def load_config(path: Path | str, *classes: type) -> tuple:
    """Load one instance of each dataclass in ``classes`` from a config file
    or a run manifest."""
    entries = _strip_manifest(read_key_values(path))
    parts = split_entries(entries, classes, path=str(path))
    return tuple(build(cls, part, path=str(path)) for cls, part in zip(classes, parts))
