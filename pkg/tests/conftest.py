import numpy as np
import pytest

from eit_shapes.fem import Conductivity
from eit_shapes.geometry import Partition, Polygon
from eit_shapes.measurements import phantom
from eit_shapes.meshing import coarse_mesh, refine

SQUARE = [(0.3, 0.3), (0.7, 0.3), (0.7, 0.7), (0.3, 0.7)]


def square_partition(coords=SQUARE):
    return Partition((Polygon.from_coords(coords),))


def square_sigma(value=10.0, background=1.0):
    return Conductivity(square_partition(), (value,), background)


@pytest.fixture
def pentagon():
    return phantom('pentagon')


@pytest.fixture
def pentagon_meshes(pentagon):
    coarse = coarse_mesh(pentagon.partition, 4)
    return coarse, refine(coarse, 2)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
