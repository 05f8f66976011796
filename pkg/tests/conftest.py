import numpy as np
import pytest
from hypothesis import settings

from ellreg.mesh import Grid

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def grid64():
    return Grid(2, 64)


@pytest.fixture(scope="session")
def grid128():
    return Grid(2, 128)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
