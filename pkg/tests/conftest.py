import numpy as np
import pytest

from woundbench.geometry import TriangleMesh
from woundbench.kernels import BACKENDS
from woundbench.synthfix import icosphere

from oracles import grid_plane


@pytest.fixture(params=sorted(BACKENDS))
def backend(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def unit_square():
    V, F = grid_plane(1, 1)
    return TriangleMesh(V, F)


@pytest.fixture(scope="session")
def sphere3():
    return icosphere(3, 10.0)


def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])
