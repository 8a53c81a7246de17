import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def small_grid(n=24, h=0.1, centered=True):
    from emberswarm.grid import GridSpec

    if centered:
        half = 0.5 * n * h - 0.5 * h
        return GridSpec(n, n, h, (-half, -half))
    return GridSpec(n, n, h)
