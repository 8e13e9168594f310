"""Shared test fixtures.

Ensures ``src/`` is importable so the suite runs against a plain checkout,
and provides small seeded datasets and model geometries.
"""
from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

_REPO = Path(__file__).resolve().parent.parent
_SRC = _REPO / "src"
if str(_SRC) not in sys.path:
    sys.path.insert(0, str(_SRC))

from dynsal.data import SynthConfig, synthesize_dataset  # noqa: E402
from dynsal.model import ModelConfig  # noqa: E402


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config() -> ModelConfig:
    """Feature side 4: the pooled attention map collapses to 1x1."""
    return ModelConfig(input_size=32, encoder_widths=(2, 2, 2), attention_widths=(2, 2), hidden_channels=2)


@pytest.fixture
def small_config() -> ModelConfig:
    """Feature side 8, attention map 2x2 before upsampling."""
    return ModelConfig(input_size=64, encoder_widths=(4, 4, 4), attention_widths=(4, 4), hidden_channels=3)


@pytest.fixture(scope="session")
def toy_dataset(tmp_path_factory) -> Path:
    """Three 64x64 videos of six frames; read-only for tests."""
    root = tmp_path_factory.mktemp("datasets") / "toy"
    synthesize_dataset(root, SynthConfig(videos=3, frames=6, size=64, seed=7, observers=4))
    return root


@pytest.fixture(scope="session")
def static_dataset(tmp_path_factory) -> Path:
    root = tmp_path_factory.mktemp("datasets") / "static"
    synthesize_dataset(root, SynthConfig(videos=4, frames=1, size=64, seed=11, observers=4, kind="static"))
    return root
