import numpy as np
import pytest

from voxevo.morphology import Morphology
from voxevo.terrain import make_flat_terrain


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def flat():
    return make_flat_terrain()


@pytest.fixture
def single_actuator():
    return Morphology([[3]])


@pytest.fixture
def small_body():
    # one of each material around a vertical actuator
    return Morphology([[3, 1], [2, 4]])
