"""Pytest fixtures and configuration."""

import os

import numpy as np
import pytest

from loasp.numerics.tensor import get_default_dtype, set_default_dtype
from loasp.types.config import DataConfig, ProtocolConfig, RunConfig, TrainConfig


def pytest_collection_modifyitems(config, items):
    """Skip ``slow`` tests unless LOASP_RUN_SLOW=1."""
    if os.getenv("LOASP_RUN_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="set LOASP_RUN_SLOW=1 to run the desk-scale experiments")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(autouse=True)
def restore_precision():
    """Keep the numerics default dtype from leaking between tests."""
    previous = get_default_dtype()
    yield
    set_default_dtype(previous)


@pytest.fixture
def rng():
    """Seeded generator for weights and inputs."""
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    """A run small enough to train in a few seconds: DG over 3 domains, 16×16 images, one seed."""
    return RunConfig(
        seeds=[0],
        data=DataConfig(domains=["A", "B", "C"], train_per_domain=4, test_per_domain=5, image_size=16),
        train=TrainConfig(epochs=1, batch_size=4),
        protocol=ProtocolConfig(mode="DG", held_out="C"),
    )


@pytest.fixture
def out_dir(tmp_path, monkeypatch):
    """Temporary output root, also exported as LOASP_OUT."""
    root = tmp_path / "runs"
    monkeypatch.setenv("LOASP_OUT", str(root))
    return root
