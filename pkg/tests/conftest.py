"""
Pytest configuration and shared fixtures.
"""
import tempfile
from pathlib import Path

import numpy as np
import pytest

from msg_policy.config import RunConfig, TrainConfig


@pytest.fixture
def temp_output_dir():
    """Create a temporary output root for pipeline and CLI runs."""
    with tempfile.TemporaryDirectory() as tmpdir:
        yield Path(tmpdir)


@pytest.fixture
def rng():
    """Seeded generator so every test draws the same numbers."""
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_train_config():
    """Train config small enough for tests that only need a working checkpoint."""
    return TrainConfig(epochs=2, batch_size=32, hidden=(16, 16), time_features=4, gaussian_bins=4)


@pytest.fixture
def small_run_config(tiny_train_config):
    """Run config on `reach` with two demos, one seed and a handful of episodes."""
    return RunConfig(
        task="reach",
        demos=2,
        seeds=(0,),
        train=tiny_train_config,
        evaluation={"episodes": 2, "methods": ("object-frame", "msg-flow"), "weightings": ("constant",), "max_steps": 6},
        toy={"samples": 40},
    )


@pytest.fixture
def write_config(temp_output_dir):
    """Write a YAML run config into the temporary directory and return its path."""

    def _write(text: str, name: str = "run.yaml") -> Path:
        path = temp_output_dir / name
        path.write_text(text, encoding="utf-8")
        return path

    return _write
