import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from functions.config import SinkhornConfig
from functions.errors import EmptyAnchorSet
from functions.synthetic_oracle import brute_force_sinkhorn
from functions.uot_match import (
    CorrespondenceMap,
    extract_correspondence,
    match_anchors,
    sinkhorn_uot,
    welsch_cost,
)


def separated_anchors(seed, n=27):
    """Jittered 3x3x3 lattice in shuffled order; neighbors stay at least 0.6 apart."""
    rng = np.random.default_rng(seed)
    axis = np.arange(3, dtype=np.float64)
    grid = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1).reshape(-1, 3)
    grid = grid + rng.uniform(-0.2, 0.2, size=grid.shape)
    return grid[rng.permutation(len(grid))[:n]], rng


def test_welsch_cost_values():
    cost = welsch_cost(np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]),
                       np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]), gamma=1.0)
    assert cost.D[0, 0] == 0.0 and cost.D[1, 1] == 0.0
    # median of (0, 1, 1, 0) is 0.5, so beta = 0.5 and distance 1 = beta * 2
    assert cost.beta == pytest.approx(0.5)
    assert cost.D[0, 1] == pytest.approx(1.0 - np.exp(-2.0))

    beta_sqrt2 = welsch_cost(np.zeros((1, 3)), np.array([[np.sqrt(2.0), 0.0, 0.0]]), gamma=1.0)
    assert beta_sqrt2.D[0, 0] == pytest.approx(1.0 - np.exp(-0.5))

    far = welsch_cost(np.array([[0.0, 0.0, 0.0], [0.1, 0.0, 0.0]]), np.array([[0.0, 0.0, 0.0], [1e6, 0, 0]]),
                      gamma=0.05)
    assert far.D[0, 1] == pytest.approx(1.0)


def test_welsch_cost_at_beta_root_two():
    # two source anchors, one edit anchor: distances 1 and 3, median 2, beta = gamma * 2
    cost = welsch_cost(np.array([[1.0, 0.0, 0.0], [3.0, 0.0, 0.0]]), np.zeros((1, 3)), gamma=1.0 / (2.0 * np.sqrt(2.0)))
    assert cost.beta == pytest.approx(1.0 / np.sqrt(2.0))
    assert cost.D[0, 0] == pytest.approx(1.0 - np.exp(-1.0))


def test_empty_anchor_sets_rejected():
    with pytest.raises(EmptyAnchorSet):
        welsch_cost(np.zeros((0, 3)), np.zeros((2, 3)), 0.05)
    with pytest.raises(EmptyAnchorSet):
        match_anchors(np.zeros((2, 3)), np.zeros((0, 3)))


def test_singleton_plan():
    plan = sinkhorn_uot(np.array([[0.3]]))
    assert plan.P.shape == (1, 1) and plan.P[0, 0] > 0
    assert plan.converged
    assert extract_correspondence(plan.P).corr.tolist() == [0]


def test_diagonal_cost_gives_identity_plan():
    D = np.full((3, 3), 0.9)
    np.fill_diagonal(D, 0.0)
    plan = sinkhorn_uot(D)
    assert plan.converged and plan.iterations <= 2000
    assert extract_correspondence(plan.P).corr.tolist() == [0, 1, 2]


def test_large_marginal_penalty_approaches_balanced_transport():
    config = SinkhornConfig(lambda1=1e6, lambda2=1e6, max_iters=20000)
    plan = sinkhorn_uot(np.array([[0.2, 0.5], [0.7, 0.1]]), config)
    assert plan.converged
    np.testing.assert_allclose(plan.P.sum(axis=1), 0.5, atol=1e-3)
    np.testing.assert_allclose(plan.P.sum(axis=0), 0.5, atol=1e-3)


def test_iteration_cap_reports_not_converged():
    plan = sinkhorn_uot(np.random.default_rng(0).uniform(size=(4, 5)), SinkhornConfig(max_iters=1))
    assert not plan.converged
    assert plan.iterations == 1
    assert plan.marginal_err == plan.residuals[-1] > 0
    assert plan.summary()["converged"] is False


@pytest.mark.parametrize("seed", range(50))
def test_solver_matches_direct_scaling_reference(seed):
    rng = np.random.default_rng(seed)
    n, m = rng.integers(1, 9, size=2)
    D = rng.uniform(size=(n, m))
    plan = sinkhorn_uot(D)
    reference = brute_force_sinkhorn(D)
    assert plan.converged and plan.iterations <= 2000
    assert reference.converged
    np.testing.assert_allclose(plan.P, reference.P, atol=1e-6, rtol=0)
    assert extract_correspondence(plan.P).corr.tolist() == extract_correspondence(reference.P).corr.tolist()


def test_argmax_columns_and_ties():
    P = np.array([[0.1, 0.5], [0.7, 0.5], [0.2, 0.0]])
    assert extract_correspondence(P).corr.tolist() == [1, 0]


@pytest.mark.parametrize("seed", range(20))
def test_correspondence_invariances(seed):
    anchors, rng = separated_anchors(seed)
    _, _, corr = match_anchors(anchors, anchors)
    assert corr.corr.tolist() == list(range(len(anchors)))

    scale = rng.uniform(0.1, 10.0)
    _, _, scaled = match_anchors(anchors * scale, anchors * scale)
    assert scaled.corr.tolist() == corr.corr.tolist()

    src_perm = rng.permutation(len(anchors))
    edit_perm = rng.permutation(len(anchors))
    edit = anchors + rng.normal(scale=0.02, size=anchors.shape)
    _, _, base = match_anchors(anchors, edit)
    _, _, permuted = match_anchors(anchors[src_perm], edit[edit_perm])
    assert src_perm[permuted.corr].tolist() == base.corr[edit_perm].tolist()


@pytest.mark.parametrize("seed", range(5))
def test_small_perturbation_agrees_with_hungarian_assignment(seed):
    anchors, rng = separated_anchors(100 + seed, n=20)
    edit = anchors + rng.normal(scale=0.02, size=anchors.shape)
    cost, _, corr = match_anchors(anchors, edit)
    rows, cols = linear_sum_assignment(cost.D)
    assert corr.corr[cols].tolist() == rows.tolist()


def test_correspondence_file(tmp_path):
    corr = CorrespondenceMap(np.array([2, 0, 1]))
    loaded = CorrespondenceMap.load(corr.save(tmp_path / "correspondence.json"))
    assert loaded.corr.tolist() == [2, 0, 1] and len(loaded) == 3
    with pytest.raises(FileNotFoundError):
        CorrespondenceMap.load(tmp_path / "nope.json")


@pytest.mark.parametrize("seed", range(5))
def test_residuals_never_rise_across_ten_iteration_windows(seed):
    rng = np.random.default_rng(seed)
    plan = sinkhorn_uot(rng.uniform(size=(12, 15)))
    residuals = np.asarray(plan.residuals)
    assert plan.converged and len(residuals) >= 20
    windows = residuals[: len(residuals) // 10 * 10].reshape(-1, 10).max(axis=1)
    assert np.all(np.diff(windows) <= 1e-12)
