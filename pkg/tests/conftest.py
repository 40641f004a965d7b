import math

import numpy as np
import pytest

from nsinflation.spectral import GridSpec, ScalarSpectralField, SpectralField


@pytest.fixture
def plain_grid():
    return GridSpec(4 * math.pi, 64)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def smooth_vector(grid, rng, width=2.0):
    shape = grid.vector_shape()
    c = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    c *= np.exp(-grid.ksq / (2 * width**2))[:, None]
    return SpectralField(grid, c)


def smooth_scalar(grid, rng, width=2.0):
    shape = grid.scalar_shape()
    c = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    c *= np.exp(-grid.ksq / (2 * width**2))
    return ScalarSpectralField(grid, c)
