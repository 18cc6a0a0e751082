from __future__ import annotations

from functools import lru_cache

import numpy as np
import pytest

from hdg_interp.config import DegreeConfig
from hdg_interp.hdg_assembly import HDGDiscretization
from hdg_interp.mesh import ElementGeometry, build_uniform_square

# (variant, k) pairs the library accepts
ALL_CONFIGS = [(v, k) for v in "ABC" for k in range(4) if not (v == "C" and k == 0)]
LOW_CONFIGS = [(v, k) for v, k in ALL_CONFIGS if k <= 2]


@lru_cache(maxsize=None)
def _discretization(variant: str, k: int, n: int) -> HDGDiscretization:
    return HDGDiscretization(build_uniform_square(n), DegreeConfig(variant, k))


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def make_disc():
    """Cached HDGDiscretization on the uniform n x n mesh."""
    return _discretization


@pytest.fixture
def skewed_geometry():
    return ElementGeometry.from_vertices(np.array([[0.1, 0.2], [0.9, 0.35], [0.3, 0.95]]))


@pytest.fixture
def reference_geometry():
    return ElementGeometry.from_vertices(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))


def sine(x, y):
    return np.sin(np.pi * x) * np.sin(np.pi * y)


def sine_laplacian(x, y):
    return -2.0 * np.pi**2 * sine(x, y)


def bubble(x, y):
    return x * (1.0 - x) * y * (1.0 - y)


def bubble_laplacian(x, y):
    return -2.0 * (y * (1.0 - y) + x * (1.0 - x))


def bubble_gradient(x, y):
    return (1.0 - 2.0 * x) * y * (1.0 - y), x * (1.0 - x) * (1.0 - 2.0 * y)
