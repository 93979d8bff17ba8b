import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def cx(rng, *shape):
    """Random complex array with standard normal coordinates."""
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
