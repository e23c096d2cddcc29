import numpy as np
import pytest

from cyldet.synthetic import make_calibration


@pytest.fixture(scope="session")
def calib():
    return make_calibration()


@pytest.fixture(scope="session")
def simple_p():
    """Projection with focal 100, principal point at the origin."""
    return np.array([[100.0, 0, 0, 0], [0, 100.0, 0, 0], [0, 0, 1.0, 0]])


def random_car_box(rng, z_range=(6.0, 50.0)):
    import cyldet

    dims = (rng.uniform(1.5, 1.9), rng.uniform(1.3, 1.8), rng.uniform(3.4, 4.6))
    z = rng.uniform(*z_range)
    x = rng.uniform(-0.25, 0.25) * z
    y = rng.uniform(-1.0, 2.0)
    return cyldet.Box3D((x, y, z), dims, rng.uniform(-np.pi, np.pi))
