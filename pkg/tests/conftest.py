import numpy as np
import pytest

from synthscene import make_scene, two_plane_scene


@pytest.fixture(scope="session")
def scene0():
    return make_scene(0)


@pytest.fixture(scope="session")
def scene1():
    return make_scene(1)


@pytest.fixture(scope="session")
def two_planes():
    cloud, bbox, fz, bz = two_plane_scene()
    return {"cloud": cloud, "bbox": bbox, "front_z": fz, "back_z": bz}


def random_pose(rng, max_angle=2.5):
    """Random valid pose with camera above a scene-ish position."""
    from roadreg.core import exp_so3, PoseSE3
    theta = rng.uniform(-1, 1, 3)
    theta *= max_angle / max(np.linalg.norm(theta), 1e-9)
    R = exp_so3(theta)
    return PoseSE3(R, rng.uniform(-5, 5, 3))
