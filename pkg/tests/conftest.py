import numpy as np
import pytest

from levycarma.grid import GridSpec
from levycarma.levy import LevyTriplet, levy_measure


@pytest.fixture
def gaussian():
    return LevyTriplet(1.0, 0.0, levy_measure("zero"))


@pytest.fixture
def line():
    return GridSpec.centered((256,), (0.1,))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
