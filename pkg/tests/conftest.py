import numpy as np
import pytest

from functions.scene_model import Camera, GaussianCloud
from functions.spherical_harmonics import sh_from_rgb
from functions.synthetic_oracle import make_rigid_scene


def build_cloud(mu, s=0.1, sigma=0.9, colors=None, degree=0, q=None, frame=1):
    mu = np.asarray(mu, dtype=np.float64).reshape(-1, 3)
    n = mu.shape[0]
    q = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)) if q is None else q
    s = np.broadcast_to(np.asarray(s, dtype=np.float64), (n, 3)) if np.ndim(s) <= 1 else s
    sigma = np.broadcast_to(np.asarray(sigma, dtype=np.float64), (n,))
    colors = np.full((n, 3), 0.5) if colors is None else np.broadcast_to(colors, (n, 3))
    return GaussianCloud(mu, q, s, sigma, sh_from_rgb(colors, degree), sh_degree=degree, frame=frame)


def ortho_camera(size=33, fx=10.0):
    """Looks down +z from z = -5; world (0,0,0) projects to the image center."""
    return Camera("orthographic", np.eye(3), [0.0, 0.0, 5.0], fx, fx, (size - 1) / 2.0, (size - 1) / 2.0,
                  size, size)


@pytest.fixture
def make_cloud():
    return build_cloud


@pytest.fixture
def camera():
    return ortho_camera()


@pytest.fixture
def pinhole():
    return Camera.look_at((0.0, 0.0, -4.0), (0.0, 0.0, 0.0), fx=40.0, width=32, height=32)


@pytest.fixture(scope="session")
def rigid_scene():
    return make_rigid_scene(n_gaussians=200, omega=0.1, n_frames=5, seed=0)


@pytest.fixture(scope="session")
def clone_scene():
    return make_rigid_scene(n_gaussians=200, omega=0.1, n_frames=5, seed=1, clone=True)
