import numpy as np
import pytest
from scipy.spatial.distance import pdist

from functions.anchor_extract import (
    DELTA_FACTOR,
    AnchorSet,
    BoundingSphere,
    LineSet,
    anchor_cloud,
    bounding_sphere,
    build_neighborhoods,
    extract_anchor_pair,
    extract_anchors,
    sample_lines,
    sphere_point,
)
from functions.errors import EmptyInput, NoAnchorsProduced

Z_AXIS = LineSet(np.array([[0.0, 0.0, -10.0]]), np.array([[0.0, 0.0, 10.0]]))


def lattice(n):
    axis = np.arange(n, dtype=np.float64)
    return np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1).reshape(-1, 3)


def brute_force_groups(points, k):
    assigned = np.zeros(len(points), dtype=bool)
    groups = []
    for i in range(len(points)):
        if assigned[i]:
            continue
        assigned[i] = True
        free = np.flatnonzero(~assigned)
        distances = np.linalg.norm(points[free] - points[i], axis=1)
        chosen = free[np.lexsort((free, distances))][:k]
        assigned[chosen] = True
        groups.append([i] + [int(c) for c in chosen])
    return groups


def brute_force_lines(points, lines, groups, delta):
    directions = lines.directions
    chosen = []
    for group in groups:
        found = -1
        for line in range(len(lines)):
            d = np.linalg.norm(np.cross(points[group] - lines.starts[line], directions[line]), axis=-1)
            if np.all(d <= delta):
                found = line
                break
        chosen.append(found)
    return chosen


def test_single_point_sphere_gets_radius_floor():
    sphere = bounding_sphere(np.array([[1.0, 2.0, 3.0]]))
    np.testing.assert_array_equal(sphere.center, [1.0, 2.0, 3.0])
    assert sphere.radius == 1e-6


def test_two_point_sphere_is_centered_on_midpoint():
    sphere = bounding_sphere(np.array([[0.0, 0.0, 0.0], [4.0, 0.0, 0.0]]))
    np.testing.assert_allclose(sphere.center, [2.0, 0.0, 0.0])
    assert sphere.radius == pytest.approx(2.0)


def test_cube_corners_sphere_radius():
    corners = lattice(2)
    sphere = bounding_sphere(corners)
    assert np.sqrt(3) / 2 - 1e-12 <= sphere.radius <= 1.1 * np.sqrt(3) / 2
    assert sphere.contains(corners)


def test_random_cloud_is_enclosed():
    points = np.random.default_rng(4).normal(size=(500, 3)) * [1.0, 3.0, 0.5]
    assert bounding_sphere(points).contains(points)
    with pytest.raises(EmptyInput):
        bounding_sphere(np.zeros((0, 3)))


def test_sphere_point_poles_and_equator():
    sphere = BoundingSphere(center=np.array([1.0, 1.0, 1.0]), radius=2.0)
    for phi in (0.0, 1.3, 4.0):
        np.testing.assert_allclose(sphere_point(sphere, 1.0, phi), [1.0, 1.0, 3.0])
    np.testing.assert_allclose(sphere_point(sphere, 0.0, 0.0), [3.0, 1.0, 1.0])


def test_sample_lines_deterministic_with_prefix_property():
    sphere = BoundingSphere(center=np.zeros(3), radius=1.0)
    first = sample_lines(sphere, 300, seed=7)
    again = sample_lines(sphere, 300, seed=7)
    short = sample_lines(sphere, 120, seed=7)
    np.testing.assert_array_equal(first.starts, again.starts)
    np.testing.assert_array_equal(first.ends, again.ends)
    np.testing.assert_array_equal(first.starts[:120], short.starts)
    np.testing.assert_allclose(np.linalg.norm(first.starts, axis=1), 1.0)
    assert not np.array_equal(sample_lines(sphere, 300, seed=8).starts, first.starts)


def test_three_collinear_points_form_one_group():
    groups, d_mean = build_neighborhoods(np.array([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0]]), 2)
    assert [list(g) for g in groups] == [[0, 1, 2]]
    assert d_mean == pytest.approx(4.0 / 3.0)


def test_singleton_group_has_no_spread():
    groups, d_mean = build_neighborhoods(np.array([[5.0, 5.0, 5.0]]), 2)
    assert [list(g) for g in groups] == [[0]]
    assert d_mean == 0.0


def test_groups_are_disjoint_and_small():
    points = np.random.default_rng(0).uniform(size=(301, 3))
    groups, _ = build_neighborhoods(points, 2)
    assert all(len(g) <= 3 for g in groups)
    assert sorted(int(x) for g in groups for x in g) == list(range(301))


@pytest.mark.parametrize("points", [lattice(6), np.random.default_rng(2).uniform(size=(400, 3))],
                         ids=["lattice", "uniform"])
def test_grouping_matches_brute_force(points):
    groups, d_mean = build_neighborhoods(points, 2)
    expected = brute_force_groups(points, 2)
    assert [list(map(int, g)) for g in groups] == expected
    spreads = [pdist(points[g]).mean() for g in expected if len(g) > 1]
    assert d_mean == pytest.approx(np.mean(spreads), rel=1e-12)


def test_anchor_is_distance_weighted_centroid():
    points = np.array([[1.0, 0.0, 0.0], [0.0, 2.0, 0.0]])
    anchors = extract_anchors(points, Z_AXIS, [np.array([0, 1])], d_mean=3.0)
    np.testing.assert_allclose(anchors.positions[0], (1.0 * points[0] + 2.0 * points[1]) / 3.0)
    np.testing.assert_allclose(anchors.member_weights[0], [1.0 / 3.0, 2.0 / 3.0])


def test_symmetric_pair_anchor_is_midpoint():
    points = np.array([[0.5, 0.0, 1.0], [-0.5, 0.0, 3.0]])
    anchors = extract_anchors(points, Z_AXIS, [np.array([0, 1])], d_mean=1.0)
    np.testing.assert_allclose(anchors.positions[0], [0.0, 0.0, 2.0])


def test_member_outside_cylinder_falls_back_to_nearest_anchor():
    delta = DELTA_FACTOR * 1.0
    points = np.array([[0.5, 0.0, 0.0], [-0.5, 0.0, 0.0], [0.0, 0.0, 3.0], [1.01 * delta, 0.0, 3.0]])
    anchors = extract_anchors(points, Z_AXIS, [np.array([0, 1]), np.array([2, 3])], d_mean=1.0)
    assert len(anchors) == 1
    assert anchors.n_neighborhoods == 2
    assert anchors.fallback_gaussians == 2
    assert anchors.gaussian_to_anchors == [[0], [0], [0], [0]]
    assert anchors.anchored_fraction == 0.5


def test_no_anchor_at_all_raises():
    points = np.array([[5.0, 5.0, 0.0], [6.0, 5.0, 0.0]])
    with pytest.raises(NoAnchorsProduced):
        extract_anchors(points, Z_AXIS, [np.array([0, 1])], d_mean=1.0)


def test_neighborhoods_must_partition_the_cloud():
    points = np.zeros((3, 3))
    with pytest.raises(EmptyInput):
        extract_anchors(points, Z_AXIS, [np.array([0, 1])], d_mean=1.0)


def test_cylinder_test_matches_brute_force():
    rng = np.random.default_rng(11)
    points = rng.uniform(-1.0, 1.0, size=(450, 3))
    groups, d_mean = build_neighborhoods(points, 2)
    lines = sample_lines(bounding_sphere(points), 3000, seed=5)
    anchors = extract_anchors(points, lines, groups, d_mean)

    expected = brute_force_lines(points, lines, groups, DELTA_FACTOR * d_mean)
    anchored = [g for g, line in enumerate(expected) if line >= 0]
    assert anchors.line_index == [expected[g] for g in anchored]
    assert anchors.membership == [list(map(int, groups[g])) for g in anchored]


def test_grid_cloud_anchors():
    points = lattice(10)
    lines = sample_lines(bounding_sphere(points), 300000, seed=0)
    anchors = anchor_cloud(points, lines, k=2)
    assert anchors.delta == np.sqrt(3.0) / 2.0 * anchors.d_mean
    assert anchors.anchored_fraction >= 0.95
    for position, members in zip(anchors.positions, anchors.membership):
        assert np.all(position >= points[members].min(axis=0) - 1e-12)
        assert np.all(position <= points[members].max(axis=0) + 1e-12)
    assert all(len(a) >= 1 for a in anchors.gaussian_to_anchors)


def test_anchor_set_survives_json(tmp_path):
    points = np.random.default_rng(6).uniform(size=(60, 3))
    anchors = anchor_cloud(points, sample_lines(bounding_sphere(points), 20000, seed=1), k=2)
    loaded = AnchorSet.load(anchors.save(tmp_path / "anchors.json"))
    np.testing.assert_array_equal(loaded.positions, anchors.positions)
    assert loaded.membership == anchors.membership
    assert loaded.gaussian_to_anchors == anchors.gaussian_to_anchors
    assert (loaded.delta, loaded.d_mean) == (anchors.delta, anchors.d_mean)
    with pytest.raises(FileNotFoundError):
        AnchorSet.load(tmp_path / "missing.json")


def test_identical_clouds_get_identical_anchors():
    points = np.random.default_rng(9).uniform(size=(90, 3))
    source, edit = extract_anchor_pair(points, points.copy(), k=2, n_rays=20000, seed=3)
    np.testing.assert_array_equal(source.positions, edit.positions)
    np.testing.assert_allclose(source.positions_at(points), source.positions)


def test_degenerate_clouds_anchor_at_their_centroids():
    point = np.array([[0.3, -1.0, 2.0]])
    source, edit = extract_anchor_pair(point, point.copy(), k=2, n_rays=100, seed=0)
    for anchors in (source, edit):
        assert len(anchors) == 1 and anchors.delta == 0.0
        np.testing.assert_array_equal(anchors.positions, point)
        assert anchors.gaussian_to_anchors == [[0]] and anchors.line_index == [-1]

    stacked = np.repeat(point, 3, axis=0)
    anchors = anchor_cloud(stacked, sample_lines(bounding_sphere(stacked), 100, seed=0), k=2)
    np.testing.assert_allclose(anchors.positions, point)
    np.testing.assert_allclose(anchors.member_weights[0], [1.0 / 3.0] * 3)
    np.testing.assert_allclose(anchors.positions_at(stacked + 1.0), point + 1.0)


def test_coverage_never_drops_with_more_lines():
    points = np.random.default_rng(12).uniform(size=(300, 3))
    groups, d_mean = build_neighborhoods(points, 2)
    lines = sample_lines(bounding_sphere(points), 40000, seed=2)
    coverage = [extract_anchors(points, lines.head(n), groups, d_mean).anchored_fraction
                for n in (1000, 4000, 16000, 40000)]
    assert coverage == sorted(coverage)
    assert coverage[-1] > coverage[0]
