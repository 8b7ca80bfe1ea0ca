import numpy as np
import pytest

from fracbsde.forward import EtaSpec
from fracbsde.kernel import KernelMatrix
from fracbsde.paths import sample_fbm
from fracbsde.solver import EtaModel
from fracbsde.timegrid import TimeGrid


@pytest.fixture(scope="session")
def kernel32():
    return KernelMatrix(TimeGrid.uniform(1.0, 32), 0.75)


@pytest.fixture(scope="session")
def eta_small():
    """eta = t + B^H on [0, 1.25] with 4000 particles; shared by solver tests."""
    grid = TimeGrid(1.0, 0.25, 1 / 32)
    k = KernelMatrix(grid, 0.75)
    fbm = sample_fbm(k, 4000, 123)
    return EtaModel.simulate(EtaSpec(0.0, 1.0, 1.0), fbm, k)


@pytest.fixture(scope="session")
def eta_driftless():
    grid = TimeGrid(1.0, 0.25, 1 / 32)
    k = KernelMatrix(grid, 0.75)
    fbm = sample_fbm(k, 4000, 321)
    return EtaModel.simulate(EtaSpec(0.0, 0.0, 1.0), fbm, k)


@pytest.fixture
def rng():
    return np.random.default_rng(2024)
