"""Shared fixtures for the test suite."""

import numpy as np
import pytest

from models.schemas import ManifoldKind, MetaConfig, ShapeSpec
from tools.manifolds import random_point


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def stiefel_83():
    return ManifoldKind(family="stiefel", d=8, p=3)


@pytest.fixture
def grassmann_63():
    return ManifoldKind(family="grassmann", d=6, p=3)


@pytest.fixture
def point_factory():
    def make(family: str, d: int, p: int, seed: int = 0):
        return random_point(ManifoldKind(family=family, d=d, p=p), seed)
    return make


@pytest.fixture
def tiny_config():
    """A meta-training run small enough for unit tests."""
    return MetaConfig(
        shapes=[ShapeSpec(task="pca", d=6, p=3)],
        inner_steps=2,
        outer_steps=2,
        hidden_size=2,
        num_layers=1,
        dataset_size=24,
        batch_size=8,
        seed=7,
    )
