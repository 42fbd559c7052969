import numpy as np
import pytest

from nscontrol.galerkin import build_torus_system


@pytest.fixture(scope="session")
def sys1d_m2():
    return build_torus_system(2, 1)


@pytest.fixture(scope="session")
def sys1d_m3():
    return build_torus_system(3, 1)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
