from pathlib import Path

import numpy as np
import pytest

from src.search_space.space import SearchConstraints
from src.trainer.toy_video import ToyVideoSpec, generate_toy_dataset
from tests.helpers import toy_genome

REPO_ROOT = Path(__file__).resolve().parent.parent


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def constraints():
    return SearchConstraints()


@pytest.fixture
def genome():
    return toy_genome()


@pytest.fixture
def tiny_genome():
    """Same architecture at half the default width, for gradient checks."""
    return toy_genome(channel_scale=0.03125)


@pytest.fixture(scope="session")
def small_dataset():
    spec = ToyVideoSpec(
        frames=4, height=8, width=8, train_samples=32, val_samples=16, test_samples=16, seed=3
    )
    return generate_toy_dataset(spec)


@pytest.fixture
def example_genome_path():
    return REPO_ROOT / "config" / "genomes" / "toy_example.json"
