"""Unit tests for src/dynsal/config.py.

Run with: python -m pytest tests/test_config.py -v
"""
from __future__ import annotations

from dataclasses import dataclass

import pytest

from dynsal import config as cfg
from dynsal.errors import UsageError
from dynsal.model import ModelConfig


@dataclass(frozen=True)
class Knobs:
    rate: float = 0.5
    steps: int = 3
    name: str = "plain"
    enabled: bool = False
    widths: tuple[int, ...] = (1, 2)


@dataclass(frozen=True)
class Extra:
    seed: int = 0


# ---------------------------------------------------------------------------
# parse_key_values
# ---------------------------------------------------------------------------

class TestParse:
    def test_comments_and_blank_lines(self):
        entries = cfg.parse_key_values("# header\n\nrate = 0.25\n  steps=4  \n")
        assert entries == {"rate": ("0.25", 3), "steps": ("4", 4)}

    def test_value_may_contain_equals(self):
        assert cfg.parse_key_values("name = a=b")["name"][0] == "a=b"

    def test_missing_equals_reports_location(self):
        with pytest.raises(UsageError, match=r"knobs\.cfg:2:"):
            cfg.parse_key_values("rate = 1\nsteps 4\n", path="knobs.cfg")

    def test_duplicate_key(self):
        with pytest.raises(UsageError, match="duplicate"):
            cfg.parse_key_values("rate = 1\nrate = 2\n")

    def test_empty_key(self):
        with pytest.raises(UsageError, match="empty key"):
            cfg.parse_key_values(" = 2\n")


# ---------------------------------------------------------------------------
# build / dump
# ---------------------------------------------------------------------------

class TestBuild:
    def test_coerces_every_field_type(self):
        entries = cfg.parse_key_values("rate = 1e-4\nsteps = 7\nname = x\nenabled = yes\nwidths = 8, 16, 32\n")
        knobs = cfg.build(Knobs, entries)
        assert knobs == Knobs(rate=1e-4, steps=7, name="x", enabled=True, widths=(8, 16, 32))

    def test_missing_keys_keep_defaults(self):
        assert cfg.build(Knobs, cfg.parse_key_values("steps = 9")) == Knobs(steps=9)

    def test_unknown_key(self):
        with pytest.raises(UsageError, match="unknown key 'speed'"):
            cfg.build(Knobs, cfg.parse_key_values("speed = 1"))

    @pytest.mark.parametrize("line", ["steps = 1.5", "rate = fast", "enabled = maybe", "widths = 1, x"])
    def test_bad_values(self, line):
        with pytest.raises(UsageError, match=":1:"):
            cfg.build(Knobs, cfg.parse_key_values(line), path="k.cfg")

    def test_dataclass_validation_becomes_usage_error(self):
        with pytest.raises(UsageError):
            cfg.build(ModelConfig, cfg.parse_key_values("input_size = 100"))

    def test_dump_then_build_recovers_instance(self):
        knobs = Knobs(rate=0.1, steps=2, name="n", enabled=True, widths=(4,))
        text = "\n".join(cfg.dump(knobs))
        assert "enabled = true" in text
        assert cfg.build(Knobs, cfg.parse_key_values(text)) == knobs

    def test_dump_prefix(self):
        assert cfg.dump(Extra(seed=3), prefix="config.") == ["config.seed = 3"]


# ---------------------------------------------------------------------------
# load_config
# ---------------------------------------------------------------------------

class TestLoadConfig:
    def test_splits_keys_between_classes(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("steps = 5\nseed = 11\n")
        knobs, extra = cfg.load_config(path, Knobs, Extra)
        assert knobs.steps == 5 and extra.seed == 11

    def test_unknown_key_names_file_and_line(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("steps = 5\n\nbogus = 1\n")
        with pytest.raises(UsageError, match=r"run\.cfg:3:"):
            cfg.load_config(path, Knobs, Extra)

    def test_accepts_run_manifest(self, tmp_path):
        path = tmp_path / "run.manifest"
        lines = ["command = train", "version = 0.1.0", "input.data = d"]
        lines += cfg.dump(Knobs(steps=8), prefix=cfg.MANIFEST_CONFIG_PREFIX)
        lines += cfg.dump(Extra(seed=4), prefix=cfg.MANIFEST_CONFIG_PREFIX)
        path.write_text("\n".join(lines) + "\n")
        knobs, extra = cfg.load_config(path, Knobs, Extra)
        assert knobs == Knobs(steps=8)
        assert extra == Extra(seed=4)

    def test_missing_file(self, tmp_path):
        with pytest.raises(UsageError, match="cannot read"):
            cfg.load_config(tmp_path / "nope.cfg", Knobs)
