import numpy as np
import pytest

from snnaccel.model import NetworkConfig
from snnaccel.prepare import make_random_model


@pytest.fixture(scope="session")
def small_config():
    """Channel plan small enough for fast per-test model builds."""
    return NetworkConfig(base_channels=8, groups=2, input_hw=8)


@pytest.fixture(scope="session")
def small_model(small_config):
    return make_random_model(small_config, seed=42)


@pytest.fixture(scope="session")
def default_model():
    """Full-size model; session-scoped because the build costs ~1 s."""
    return make_random_model(seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
