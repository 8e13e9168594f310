"""Run manifests written beside every artifact a command produces.

A manifest is a ``key = value`` file::

    command = train
    version = 0.4.0
    seed = 3
    input.data = data/toy
    output.out = runs/toy
    config.base_lr = 0.0001
    ...
    wall_clock = 2026-01-01T00:00:00+00:00

``wall_clock`` is the only line that differs between two runs of the same
command. ``dynsal.config.load_config`` reads the ``config.`` keys back, so a
manifest can stand in for the config file it was produced from.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Optional

from dynsal import __version__
from dynsal import config as cfg

MANIFEST_FILE = "run.manifest"


def _now() -> str:
    return datetime.now(timezone.utc).replace(microsecond=0).isoformat()


@dataclass
class RunManifest:
    command: str
    seed: Optional[int] = None
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    configs: list[Any] = field(default_factory=list)
    version: str = __version__
    wall_clock: str = field(default_factory=_now)

    def lines(self) -> list[str]:
        lines = [f"command = {self.command}", f"version = {self.version}"]
        if self.seed is not None:
            lines.append(f"seed = {self.seed}")
        lines.extend(f"input.{k} = {v}" for k, v in self.inputs.items())
        lines.extend(f"output.{k} = {v}" for k, v in self.outputs.items())
        for obj in self.configs:
            lines.extend(cfg.dump(obj, prefix=cfg.MANIFEST_CONFIG_PREFIX))
        lines.append(f"wall_clock = {self.wall_clock}")
        return lines

    def write(self, path: Path | str) -> Path:
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text("\n".join(self.lines()) + "\n", encoding="utf-8")
        return p


def read_manifest(path: Path | str) -> dict[str, str]:
    return {key: raw for key, (raw, _) in cfg.read_key_values(path).items()}
