import numpy as np
import pytest

from fano_gibbs.sections import orthonormal_basis
from fano_gibbs.sphere import build_grid, bump_potential, normalized_volume, reference_metric


@pytest.fixture(scope="session")
def grid():
    return build_grid(32, 32)


@pytest.fixture(scope="session")
def psi0(grid):
    return reference_metric(grid)


@pytest.fixture(scope="session")
def perturbed(grid):
    """A non-symmetric reference volume of unit mass."""
    return normalized_volume(bump_potential(grid, 0.6, (1.0, 0.3), 2.0))


@pytest.fixture(scope="session")
def bases(grid):
    return {k: orthonormal_basis(k, grid) for k in (1, 2, 3, 4)}


@pytest.fixture
def rng():
    return np.random.default_rng(7)
