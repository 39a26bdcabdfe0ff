import numpy as np
import pytest

import functions.cuar_refine as cuar_refine
from functions.config import PipelineConfig, RefineConfig
from functions.cuar_refine import (
    artifact_mask,
    color_uncertainty,
    edited_gaussians,
    refine,
    schedule_pairs,
    warp_target,
)
from functions.errors import InvariantViolation, NonFiniteLoss
from functions.scene_model import Camera
from functions.spherical_harmonics import sh_to_color
from functions.splat_render import RenderedMaps, render_color
from functions.synthetic_oracle import make_occlusion_scene
from tests.conftest import build_cloud


def moved_sequence(scene):
    return [scene.edited.replace(mu=scene.expected_positions[t], frame=t) for t in range(1, scene.n_frames + 1)]


@pytest.fixture(scope="module")
def small_occlusion():
    return make_occlusion_scene(seed=0, width=64, height=64, n_views=3, n_frames=4)


def test_static_and_view_independent_colors_have_no_uncertainty(pinhole):
    cloud = build_cloud([[0.0, 0.0, 0.0], [0.3, 0.1, 0.0]], degree=2)
    assert not color_uncertainty(cloud, cloud.replace(frame=2), pinhole).any()
    flat = build_cloud([[0.0, 0.0, 0.0]], degree=0)
    moved = flat.replace(mu=[[0.5, -0.4, 0.2]], frame=2)
    assert not color_uncertainty(flat, moved, pinhole).any()


def test_color_change_of_ln2_gives_half():
    camera = Camera.look_at((0.0, 0.0, -4.0), (0.0, 0.0, 0.0), fx=40.0, width=32, height=32)
    cloud = build_cloud([[0.0, 0.0, 0.0]], degree=1)
    sh = np.array(cloud.sh)
    sh[0, :, 3] = 1.0
    unit = cloud.replace(sh=sh)
    moved_mu = np.array([[1.0, 0.0, 0.0]])
    change = np.abs(sh_to_color(sh, camera.view_directions(moved_mu))
                    - sh_to_color(sh, camera.view_directions(unit.mu))).sum()
    sh[0, :, 3] = np.log(2.0) / change
    cloud_1 = unit.replace(sh=sh)
    xi = color_uncertainty(cloud_1, cloud_1.replace(mu=moved_mu, frame=2), camera)
    assert xi[0] == pytest.approx(0.5)


def test_mask_thresholds():
    alpha = np.zeros((10, 10))
    alpha[:, :] = 1.0
    assert not artifact_mask(np.zeros((10, 10)), alpha, 1.0).any()
    assert not artifact_mask(np.full((10, 10), 0.5), alpha, 1.0).any()

    uncertainty = np.zeros((10, 10))
    uncertainty[0, :] = 1.0
    mask = artifact_mask(uncertainty, alpha, 1.0)
    assert mask.sum() == 10 and mask[0].all()

    assert not artifact_mask(np.ones((4, 4)), np.zeros((4, 4)), 1.0).any()


def test_mask_coverage_shrinks_with_epsilon():
    rng = np.random.default_rng(0)
    uncertainty = rng.exponential(size=(40, 40))
    alpha = (rng.random((40, 40)) > 0.3).astype(np.float64)
    coverage = [artifact_mask(uncertainty, alpha, eps).sum() for eps in (0.5, 1.0, 1.5, 2.0)]
    assert coverage == sorted(coverage, reverse=True)
    assert coverage[0] > coverage[-1]


def test_schedule_pairs():
    assert schedule_pairs(5, 2, 64) == [(t, v) for t in range(2, 6) for v in range(2)]
    assert schedule_pairs(11, 8, 16) == [(t, v) for t in (2, 7) for v in range(8)]
    assert schedule_pairs(1, 8, 64) == []
    assert schedule_pairs(3, 0, 64) == []
    assert len(schedule_pairs(30, 8, 10)) <= 10


def test_view_independent_scene_is_left_alone(rigid_scene):
    sequence = moved_sequence(rigid_scene)
    result = refine(sequence, rigid_scene.cameras, RefineConfig(iterations=5))
    assert result.trace.empty
    assert result.notices and "empty" in result.notices[0]
    for before, after in zip(sequence, result.clouds):
        assert after is before


def test_single_frame_is_a_no_op(rigid_scene):
    result = refine([rigid_scene.edited], rigid_scene.cameras, RefineConfig())
    assert result.clouds[0] is rigid_scene.edited and result.notices


def test_frames_must_share_coefficients(small_occlusion):
    sequence = moved_sequence(small_occlusion)
    sequence[2] = sequence[2].replace(sh=small_occlusion.source.sh)
    with pytest.raises(InvariantViolation):
        refine(sequence, small_occlusion.cameras, RefineConfig(iterations=1))


def test_refinement_lowers_foreground_loss_and_keeps_geometry(small_occlusion):
    sequence = moved_sequence(small_occlusion)
    config = RefineConfig(iterations=60, max_pairs_per_epoch=64)
    result = refine(sequence, small_occlusion.cameras, config, keep_maps=True)
    summary = result.summary()
    assert summary["final_L_fore"] < summary["initial_L_fore"]
    assert list(result.trace.columns) == ["step", "t", "v", "L_fore", "L_back", "L_refine"]
    assert result.trace["step"].max() == 60
    assert set(result.maps) == set(result.pairs)
    assert any(maps["mask"].any() for maps in result.maps.values())
    for before, after in zip(sequence, result.clouds):
        assert np.array_equal(after.mu, before.mu)
        assert np.array_equal(after.q, before.q)
        assert np.array_equal(after.s, before.s)
        assert np.array_equal(after.sigma, before.sigma)
        assert np.array_equal(after.sh, result.clouds[0].sh)
    assert not np.array_equal(result.clouds[0].sh, sequence[0].sh)


def test_background_only_objective_does_not_move(small_occlusion):
    sequence = moved_sequence(small_occlusion)
    result = refine(sequence, small_occlusion.cameras, RefineConfig(iterations=3, zeta=1.0))
    np.testing.assert_array_equal(result.clouds[0].sh, sequence[0].sh)
    assert (result.trace["L_refine"] == 0.0).all()


def test_frozen_gaussians_keep_their_colors(small_occlusion):
    sequence = moved_sequence(small_occlusion)
    trainable = edited_gaussians(small_occlusion.source, small_occlusion.edited)
    assert trainable.sum() == len(small_occlusion.extra["back_rows"])
    result = refine(sequence, small_occlusion.cameras, RefineConfig(iterations=5), trainable=trainable)
    refined = result.clouds[0].sh
    np.testing.assert_array_equal(refined[~trainable], sequence[0].sh[~trainable])


def test_non_finite_loss_aborts_with_diagnostics(small_occlusion, monkeypatch):
    def broken(raw, target, mask, eta):
        return float("nan"), np.zeros_like(raw)

    monkeypatch.setattr(cuar_refine, "image_loss_and_gradient", broken)
    with pytest.raises(NonFiniteLoss) as excinfo:
        refine(moved_sequence(small_occlusion), small_occlusion.cameras, RefineConfig(iterations=2))
    assert excinfo.value.diagnostics["step"] == 0


def test_edited_gaussians_flags_changes_and_additions():
    source = build_cloud([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
    edited = build_cloud([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [3.0, 0.0, 0.0]],
                         colors=np.array([[0.5, 0.5, 0.5], [0.9, 0.5, 0.5], [0.5, 0.5, 0.5], [0.5, 0.5, 0.5]]))
    assert edited_gaussians(source, edited).tolist() == [False, True, False, True]


def test_full_occlusion_scene_recovers_clean_colors():
    scene = make_occlusion_scene()
    sequence = moved_sequence(scene)
    config = PipelineConfig.from_dict().refine
    assert config.iterations == 200
    result = refine(sequence, scene.cameras, config, keep_maps=True)
    summary = result.summary()
    assert summary["final_L_fore"] < 0.25 * summary["initial_L_fore"]

    # 20-step windows of the per-step loss never rise past momentum noise
    per_step = result.loss_by_step()["L_refine"].to_numpy()
    windows = per_step[: len(per_step) // 20 * 20].reshape(-1, 20).mean(axis=1)
    assert len(windows) == 10
    assert np.all(np.diff(windows) <= 0.02 * per_step[0])
    assert windows[-1] < windows[0]

    for before, after in zip(sequence, result.clouds):
        assert np.array_equal(after.mu, before.mu)
        assert np.array_equal(after.sigma, before.sigma)

    clean = scene.source.replace(sh=scene.extra["clean_sh"])
    errors = []
    for (t, v), maps in result.maps.items():
        mask = maps["mask"] > 0
        if not mask.any():
            continue
        camera = scene.cameras[v]
        refined = render_color(result.clouds[t - 1], camera).color
        reference = render_color(clean.replace(mu=scene.expected_positions[t], frame=t), camera).color
        errors.append(np.abs(refined - reference)[mask].mean())
    assert errors and np.mean(errors) < 0.05


def test_warp_target_rescales_partial_coverage():
    color = np.zeros((8, 8, 3))
    color[:, :4] = [0.4, 0.6, 0.2]
    alpha_1 = np.zeros((8, 8))
    alpha_1[:, :4] = 1.0
    render_1 = RenderedMaps(color=color, alpha_acc=alpha_1)

    still = RenderedMaps(color=np.zeros((8, 8, 3)), alpha_acc=np.ones((8, 8)), flow=np.zeros((8, 8, 2)))
    np.testing.assert_array_equal(warp_target(render_1, still), color)

    alpha_t = np.zeros((8, 8))
    alpha_t[3, 6] = 0.5
    flow = np.zeros((8, 8, 2))
    flow[3, 6] = [0.5 * 4.0, 0.0]
    target = warp_target(render_1, RenderedMaps(color=np.zeros((8, 8, 3)), alpha_acc=alpha_t, flow=flow))
    np.testing.assert_allclose(target[3, 6], [0.2, 0.3, 0.1], atol=1e-12)
    np.testing.assert_array_equal(target[2], color[2])
