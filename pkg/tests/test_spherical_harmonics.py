import numpy as np
import pytest

from functions.errors import SizeMismatch
from functions.spherical_harmonics import C0, eval_sh, rgb_to_sh, sh_basis, sh_from_rgb, sh_to_color


def random_dirs(n, seed=0):
    dirs = np.random.default_rng(seed).normal(size=(n, 3))
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


def test_dc_coefficient_renders_its_color():
    rgb = np.array([[0.2, 0.5, 0.9]])
    np.testing.assert_allclose(sh_to_color(sh_from_rgb(rgb, 2), random_dirs(1)), rgb, atol=1e-12)
    np.testing.assert_allclose(rgb_to_sh(rgb), (rgb - 0.5) / C0)


def test_basis_is_orthonormal_on_the_sphere():
    # Monte Carlo estimate of the Gram matrix; real SH are orthonormal under the area measure
    dirs = random_dirs(200000, seed=1)
    basis = sh_basis(3, dirs)
    gram = 4.0 * np.pi * basis.T @ basis / dirs.shape[0]
    np.testing.assert_allclose(gram, np.eye(16), atol=0.03)


def test_degree_one_band_is_linear_in_direction():
    dirs = random_dirs(10, seed=2)
    basis = sh_basis(1, dirs)
    np.testing.assert_allclose(sh_basis(1, -dirs)[:, 1:], -basis[:, 1:])
    np.testing.assert_allclose(basis[:, 0], C0)


def test_eval_sh_shape_checks():
    sh = np.zeros((2, 3, 4))
    assert eval_sh(sh, random_dirs(2)).shape == (2, 3)
    with pytest.raises(SizeMismatch):
        eval_sh(sh, random_dirs(3))
