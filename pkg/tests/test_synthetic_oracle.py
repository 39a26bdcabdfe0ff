import numpy as np
import pytest

from functions.errors import OracleSizeExceeded
from functions.scene_model import DeformationField, deform_source, load_cloud, rotation_about_axis
from functions.splat_render import render_color
from functions.synthetic_oracle import brute_force_sinkhorn, make_occlusion_scene, make_rigid_scene
from tests.conftest import build_cloud


def test_zero_angular_speed_keeps_positions():
    scene = make_rigid_scene(n_gaussians=50, omega=0.0, n_frames=4, seed=0)
    for t in range(1, 5):
        np.testing.assert_allclose(scene.expected_positions[t], scene.edited.mu, atol=1e-12)
        np.testing.assert_allclose(deform_source(scene.source, scene.deformation, t).mu, scene.source.mu, atol=1e-12)


def test_quarter_turn_about_z():
    np.testing.assert_allclose(rotation_about_axis([[1.0, 0.0, 0.0]], (0.0, 0.0, 1.0), np.pi / 2),
                               [[0.0, 1.0, 0.0]], atol=1e-12)
    field = DeformationField.rigid_rotation((0.0, 0.0, 1.0), np.pi / 2, n_frames=3)
    moved = deform_source(build_cloud([[1.0, 0.0, 0.0]]), field, 2)
    np.testing.assert_allclose(moved.mu, [[0.0, 1.0, 0.0]], atol=1e-12)
    moved = deform_source(build_cloud([[1.0, 0.0, 0.0]]), field, 3)
    np.testing.assert_allclose(moved.mu, [[-1.0, 0.0, 0.0]], atol=1e-12)


def test_rigid_scene_is_deterministic_under_seed():
    first = make_rigid_scene(n_gaussians=80, seed=3, clone=True)
    second = make_rigid_scene(n_gaussians=80, seed=3, clone=True)
    np.testing.assert_array_equal(first.edited.mu, second.edited.mu)
    np.testing.assert_array_equal(first.edited.sh, second.edited.sh)
    np.testing.assert_array_equal(first.clone_parents, second.clone_parents)
    other = make_rigid_scene(n_gaussians=80, seed=4, clone=True)
    assert not np.array_equal(first.source.mu, other.source.mu)


def test_edit_variants(rigid_scene, clone_scene):
    assert len(rigid_scene.edited) == len(rigid_scene.source)
    np.testing.assert_array_equal(rigid_scene.edited.mu, rigid_scene.source.mu)
    assert not np.array_equal(rigid_scene.edited.sh, rigid_scene.source.sh)

    n = len(clone_scene.source)
    assert len(clone_scene.edited) == n + len(clone_scene.clone_parents) == n + 20
    offsets = clone_scene.edited.mu[n:] - clone_scene.edited.mu[clone_scene.clone_parents]
    assert np.abs(offsets).max() < 0.1

    identity = make_rigid_scene(n_gaussians=60, seed=0, identity=True, clone=True)
    assert identity.edited is identity.source
    assert "identity" in identity.description


def test_scene_files_round_trip(tmp_path, rigid_scene):
    config_path = rigid_scene.write(tmp_path, pipeline={"seed": 4})
    assert config_path.name == "config.json"
    loaded = load_cloud(tmp_path / "edited.g4dc")
    np.testing.assert_allclose(loaded.mu, rigid_scene.edited.mu, atol=1e-6)


def test_occlusion_edit_is_hidden_at_frame_one_and_exposed_later():
    scene = make_occlusion_scene(seed=0, width=48, height=48, n_views=2, n_frames=3)
    clean = scene.source.replace(sh=scene.extra["clean_sh"])
    for camera in scene.cameras:
        np.testing.assert_allclose(render_color(scene.edited, camera).color, render_color(clean, camera).color,
                                   atol=1e-4)
        last = scene.n_frames
        edited_t = render_color(scene.edited.replace(mu=scene.expected_positions[last], frame=last), camera).color
        clean_t = render_color(clean.replace(mu=scene.expected_positions[last], frame=last), camera).color
        assert np.abs(edited_t - clean_t).max() > 0.1


def test_reference_solver_size_limit():
    with pytest.raises(OracleSizeExceeded):
        brute_force_sinkhorn(np.zeros((9, 3)))
    assert brute_force_sinkhorn(np.zeros((8, 8))).converged
