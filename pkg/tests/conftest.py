import numpy as np
import pytest

from scbf.basis import build_basis


@pytest.fixture(scope="session")
def basis2():
    """Small 2D basis shared by fast unit tests."""
    return build_basis(2, 8, 4.0)


@pytest.fixture(scope="session")
def basis3():
    return build_basis(3, 6, 3.0)


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
