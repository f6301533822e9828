import numpy as np
import pytest

from lag.backends import HashedBagOfWordsEmbedder
from lag.config import ModelConfig
from lag.model import build_model

SMALL_CONFIG = ModelConfig(
    num_layers=3,
    num_heads=4,
    num_kv_heads=2,
    head_dim=8,
    vocab_size=257,
    weight_seed=42,
    max_positions=2048,
)


@pytest.fixture(scope="session")
def small_model():
    return build_model(SMALL_CONFIG)


@pytest.fixture(scope="session")
def embedder():
    return HashedBagOfWordsEmbedder(dimension=64, seed=0)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
