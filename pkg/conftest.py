import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from dyadic_core import CellSet  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng([20240611, 0])


@pytest.fixture
def diagonal_band():
    """δ-neighbourhood of the diagonal at δ = 1/16."""
    cells = [(i, j) for i in range(16) for j in range(16) if abs(i - j) <= 1]
    return CellSet.from_coords(2, 4, cells)


@pytest.fixture
def planar_family():
    from families import gen_random_two_ends

    return gen_random_two_ends(2, 6, 16, 0.125, seed=5, eps1=0.5, eps2=0.2)


@pytest.fixture
def spatial_bush():
    from families import gen_bush

    return gen_bush(3, 5, 16, 0.25, seed=3, eps1=0.5, eps2=0.2)
