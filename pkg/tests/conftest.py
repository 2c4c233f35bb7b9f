import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "pamlab", deadline=None, max_examples=25, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("pamlab")


def within(value, target, stderr, k=3.0):
    """``|value - target| <= k * stderr``."""
    return abs(value - target) <= k * stderr


@pytest.fixture
def lattice1():
    from pamlab.env_field import LatticeSpec

    return LatticeSpec(1, 8)


@pytest.fixture
def rng_np():
    return np.random.default_rng(12345)
