#!/usr/bin/env python3
"""
Anchor extraction: region-level summaries of a frame-1 Gaussian cloud.

Steps:
  1. one bounding sphere around the Gaussian centers (shared by the source
     and edited clouds when both are anchored together),
  2. random lines through pairs of area-uniform points on that sphere,
  3. greedy disjoint k-nearest-neighbor groups,
  4. for every group, the first line (in sampling order) whose radius-delta
     cylinder holds all of its members yields one anchor: the centroid of the
     members weighted by their distance to the line.

Gaussians whose group produced no anchor are attached to the nearest anchor.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import pdist

from functions.errors import EmptyInput, NoAnchorsProduced

logger = logging.getLogger(__name__)

RADIUS_FLOOR = 1e-6
DEGENERATE_LINE = 1e-9
LINE_CHUNK = 4096
DELTA_FACTOR = np.sqrt(3.0) / 2.0


@dataclass(frozen=True)
class BoundingSphere:
    center: np.ndarray
    radius: float

    def contains(self, points: np.ndarray, tolerance: float = 1e-6) -> bool:
        distances = np.linalg.norm(np.asarray(points) - self.center, axis=1)
        return bool(np.all(distances <= self.radius * (1.0 + tolerance)))


@dataclass(frozen=True)
class LineSet:
    """Sampled lines as endpoint pairs; distance tests treat them as infinite."""
    starts: np.ndarray
    ends: np.ndarray

    def __len__(self) -> int:
        return self.starts.shape[0]

    @property
    def directions(self) -> np.ndarray:
        delta = self.ends - self.starts
        return delta / np.linalg.norm(delta, axis=1, keepdims=True)

    def head(self, n: int) -> "LineSet":
        return LineSet(self.starts[:n], self.ends[:n])


@dataclass
class AnchorSet:
    positions: np.ndarray
    membership: List[List[int]]
    member_weights: List[np.ndarray]
    gaussian_to_anchors: List[List[int]]
    d_mean: float
    delta: float
    line_index: List[int] = field(default_factory=list)
    n_neighborhoods: int = 0
    fallback_gaussians: int = 0

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def anchored_fraction(self) -> float:
        return len(self) / self.n_neighborhoods if self.n_neighborhoods else 0.0

    def positions_at(self, mu: np.ndarray) -> np.ndarray:
        """Anchor positions re-evaluated on another frame's Gaussian centers."""
        mu = np.asarray(mu, dtype=np.float64)
        return np.array([weights @ mu[members] for members, weights in zip(self.membership, self.member_weights)]
                        ).reshape(-1, 3)

    def to_dict(self) -> Dict:
        return {
            "anchors": self.positions.tolist(),
            "membership": [list(map(int, m)) for m in self.membership],
            "member_weights": [w.tolist() for w in self.member_weights],
            "gaussian_to_anchors": [list(map(int, a)) for a in self.gaussian_to_anchors],
            "d_mean": self.d_mean,
            "delta": self.delta,
            "line_index": list(map(int, self.line_index)),
            "n_neighborhoods": self.n_neighborhoods,
            "fallback_gaussians": self.fallback_gaussians,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "AnchorSet":
        return cls(
            positions=np.asarray(data["anchors"], dtype=np.float64).reshape(-1, 3),
            membership=[list(m) for m in data["membership"]],
            member_weights=[np.asarray(w, dtype=np.float64) for w in data["member_weights"]],
            gaussian_to_anchors=[list(a) for a in data["gaussian_to_anchors"]],
            d_mean=float(data["d_mean"]),
            delta=float(data["delta"]),
            line_index=list(data.get("line_index", [])),
            n_neighborhoods=int(data.get("n_neighborhoods", 0)),
            fallback_gaussians=int(data.get("fallback_gaussians", 0)),
        )

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), sort_keys=True))
        return path

    @classmethod
    def load(cls, path) -> "AnchorSet":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Anchor file not found: {path}")
        return cls.from_dict(json.loads(path.read_text()))


def bounding_sphere(points: np.ndarray) -> BoundingSphere:
    """Ritter's sphere, kept only if smaller than the box-centered sphere."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if points.shape[0] == 0:
        raise EmptyInput("bounding_sphere needs at least one point")

    a = points[np.argmax(np.linalg.norm(points - points[0], axis=1))]
    b = points[np.argmax(np.linalg.norm(points - a, axis=1))]
    center = (a + b) / 2.0
    radius = np.linalg.norm(b - a) / 2.0
    for point in points:
        distance = np.linalg.norm(point - center)
        if distance > radius:
            new_radius = (radius + distance) / 2.0
            center = center + (point - center) * ((distance - new_radius) / distance)
            radius = new_radius

    box_center = (points.min(axis=0) + points.max(axis=0)) / 2.0
    box_radius = np.linalg.norm(points - box_center, axis=1).max()
    if box_radius < radius:
        center, radius = box_center, box_radius

    # float drift in the expansion steps
    radius = max(float(np.linalg.norm(points - center, axis=1).max()), RADIUS_FLOOR)
    return BoundingSphere(center=np.asarray(center, dtype=np.float64), radius=radius)


def sphere_point(sphere: BoundingSphere, u: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Area-uniform parameterization: u = cos(polar angle), phi = azimuth."""
    u = np.asarray(u, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    ring = sphere.radius * np.sqrt(np.clip(1.0 - u * u, 0.0, None))
    return np.stack([ring * np.cos(phi), ring * np.sin(phi), sphere.radius * u], axis=-1) + sphere.center


def _draws_to_points(sphere: BoundingSphere, draws: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    starts = sphere_point(sphere, 2.0 * draws[:, 0] - 1.0, 2.0 * np.pi * draws[:, 1])
    ends = sphere_point(sphere, 2.0 * draws[:, 2] - 1.0, 2.0 * np.pi * draws[:, 3])
    return starts, ends


def sample_lines(sphere: BoundingSphere, n_rays: int, seed: int) -> LineSet:
    """Deterministic under seed; the first n lines of a seed are a prefix of any longer draw."""
    if n_rays < 1:
        raise EmptyInput(f"n_rays must be >= 1, got {n_rays}")
    draws = np.random.default_rng(seed).random((n_rays, 4))
    starts, ends = _draws_to_points(sphere, draws)
    threshold = DEGENERATE_LINE * sphere.radius
    degenerate = np.flatnonzero(np.linalg.norm(ends - starts, axis=1) < threshold)
    for i in degenerate:
        retry = np.random.default_rng([seed, int(i)])
        while np.linalg.norm(ends[i] - starts[i]) < threshold:
            s, e = _draws_to_points(sphere, retry.random((1, 4)))
            starts[i], ends[i] = s[0], e[0]
    if len(degenerate):
        logger.debug(f"Resampled {len(degenerate)} degenerate lines")
    return LineSet(starts, ends)


def build_neighborhoods(points: np.ndarray, k: int) -> Tuple[List[np.ndarray], float]:
    """Greedy disjoint groups in index order: each unassigned point takes its k
    nearest unassigned points (distance, then index). Returns (groups, d_mean)."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = points.shape[0]
    if n == 0:
        raise EmptyInput("build_neighborhoods needs a nonempty cloud")
    if k < 1:
        raise EmptyInput(f"k must be >= 1, got {k}")

    tree = cKDTree(points)
    assigned = np.zeros(n, dtype=bool)
    n_assigned = 0
    groups = []
    for i in range(n):
        if assigned[i]:
            continue
        assigned[i] = True
        n_assigned += 1
        remaining = n - n_assigned
        members = [i]
        if remaining > 0:
            want = min(k, remaining)
            query = min(n, k + 1)
            while True:
                distances, indices = tree.query(points[i], k=query)
                distances, indices = np.atleast_1d(distances), np.atleast_1d(indices)
                free = ~assigned[indices]
                if free.sum() >= want or query >= n:
                    break
                query = min(n, query * 2)
            cutoff = distances[free][want - 1]
            ball = np.asarray(tree.query_ball_point(points[i], cutoff * (1 + 1e-12) + 1e-15), dtype=np.int64)
            ball = ball[~assigned[ball]]
            ball_dist = np.linalg.norm(points[ball] - points[i], axis=1)
            chosen = ball[np.lexsort((ball, ball_dist))][:want]
            assigned[chosen] = True
            n_assigned += len(chosen)
            members.extend(int(c) for c in chosen)
        groups.append(np.asarray(members, dtype=np.int64))

    spreads = [pdist(points[g]).mean() for g in groups if len(g) >= 2]
    d_mean = float(np.mean(spreads)) if spreads else 0.0
    return groups, d_mean


def _line_distances(points: np.ndarray, starts: np.ndarray, directions: np.ndarray) -> np.ndarray:
    return np.linalg.norm(np.cross(points - starts, directions), axis=-1)


def extract_anchors(points: np.ndarray, lines: LineSet, neighborhoods: List[np.ndarray],
                    d_mean: float) -> AnchorSet:
    """One anchor per group whose members all fit in some line's radius-delta cylinder.

    Centroid-to-line distance bounds every member's distance from below (the
    cylinder is convex), so it prunes (group, line) pairs before the exact
    per-member test. The first line in sampling order that passes wins.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = points.shape[0]
    covered = np.zeros(n, dtype=int)
    for group in neighborhoods:
        covered[group] += 1
    if np.any(covered != 1):
        raise EmptyInput("neighborhoods must cover every Gaussian exactly once")

    delta = DELTA_FACTOR * d_mean
    n_groups = len(neighborhoods)
    width = max(len(g) for g in neighborhoods)
    members = np.full((n_groups, width), -1, dtype=np.int64)
    for g, group in enumerate(neighborhoods):
        members[g, :len(group)] = group
    valid = members >= 0
    centroids = np.array([points[group].mean(axis=0) for group in neighborhoods])

    if d_mean <= 0.0:
        return _centroid_anchors(points, neighborhoods, n_groups)

    directions = lines.directions
    chosen_line = np.full(n_groups, -1, dtype=np.int64)
    # loose bound: the expanded squared distance below loses a few ulps to cancellation
    prefilter = (delta * (1.0 + 1e-6) + 1e-9) ** 2
    for start in range(0, len(lines), LINE_CHUNK):
        open_groups = np.flatnonzero(chosen_line < 0)
        if open_groups.size == 0:
            break
        stop = min(start + LINE_CHUNK, len(lines))
        chunk_starts = lines.starts[start:stop]
        chunk_dirs = directions[start:stop]
        c = centroids[open_groups]
        along = c @ chunk_dirs.T - np.sum(chunk_starts * chunk_dirs, axis=1)[None, :]
        squared = (np.sum(c * c, axis=1)[:, None] - 2.0 * c @ chunk_starts.T
                   + np.sum(chunk_starts * chunk_starts, axis=1)[None, :] - along ** 2)
        group_pos, line_pos = np.nonzero(squared <= prefilter)
        if group_pos.size == 0:
            continue
        groups = open_groups[group_pos]
        candidate_points = points[np.where(valid[groups], members[groups], 0)]
        member_dist = _line_distances(candidate_points, chunk_starts[line_pos][:, None, :],
                                      chunk_dirs[line_pos][:, None, :])
        passes = np.all((member_dist <= delta) | ~valid[groups], axis=1)
        hit_groups = groups[passes]
        hit_lines = line_pos[passes] + start
        unique_groups, first = np.unique(hit_groups, return_index=True)
        chosen_line[unique_groups] = hit_lines[first]

    positions, membership, weights, line_index = [], [], [], []
    group_anchor = np.full(n_groups, -1, dtype=np.int64)
    for g in np.flatnonzero(chosen_line >= 0):
        group = neighborhoods[g]
        line = int(chosen_line[g])
        d_x = _line_distances(points[group], lines.starts[line], directions[line])
        if d_x.sum() > 0:
            w = d_x / d_x.sum()
        else:
            w = np.full(len(group), 1.0 / len(group))
        group_anchor[g] = len(positions)
        positions.append(w @ points[group])
        membership.append([int(x) for x in group])
        weights.append(w)
        line_index.append(line)

    if not positions:
        raise NoAnchorsProduced(f"none of {n_groups} neighborhoods fit inside any of {len(lines)} "
                                f"sampled cylinders (delta={delta:.4g}); raise n_rays")
    positions = np.asarray(positions)

    gaussian_to_anchors: List[List[int]] = [[] for _ in range(n)]
    for g, group in enumerate(neighborhoods):
        if group_anchor[g] >= 0:
            for x in group:
                gaussian_to_anchors[x].append(int(group_anchor[g]))
    orphans = [x for x in range(n) if not gaussian_to_anchors[x]]
    if orphans:
        _, nearest = cKDTree(positions).query(points[orphans])
        for x, a in zip(orphans, np.atleast_1d(nearest)):
            gaussian_to_anchors[x].append(int(a))

    logger.debug(f"{len(positions)}/{n_groups} neighborhoods anchored, {len(orphans)} Gaussians on fallback")
    return AnchorSet(positions=positions, membership=membership, member_weights=weights,
                     gaussian_to_anchors=gaussian_to_anchors, d_mean=d_mean, delta=delta,
                     line_index=line_index, n_neighborhoods=n_groups, fallback_gaussians=len(orphans))


def _centroid_anchors(points: np.ndarray, neighborhoods: List[np.ndarray], n_groups: int) -> AnchorSet:
    """Every group's members coincide (or stand alone): delta would be 0, so each
    group anchors at its centroid without a line."""
    logger.warning(f"All {n_groups} neighborhoods are degenerate (d_mean=0); anchoring them at their centroids")
    gaussian_to_anchors: List[List[int]] = [[] for _ in range(points.shape[0])]
    for g, group in enumerate(neighborhoods):
        for x in group:
            gaussian_to_anchors[x].append(g)
    weights = [np.full(len(group), 1.0 / len(group)) for group in neighborhoods]
    positions = np.array([w @ points[group] for w, group in zip(weights, neighborhoods)]).reshape(-1, 3)
    return AnchorSet(positions=positions, membership=[[int(x) for x in group] for group in neighborhoods],
                     member_weights=weights, gaussian_to_anchors=gaussian_to_anchors, d_mean=0.0, delta=0.0,
                     line_index=[-1] * n_groups, n_neighborhoods=n_groups, fallback_gaussians=0)


def anchor_cloud(points: np.ndarray, lines: LineSet, k: int) -> AnchorSet:
    groups, d_mean = build_neighborhoods(points, k)
    return extract_anchors(points, lines, groups, d_mean)


def extract_anchor_pair(source_points: np.ndarray, edited_points: np.ndarray, k: int, n_rays: int,
                        seed: int, sphere: Optional[BoundingSphere] = None) -> Tuple[AnchorSet, AnchorSet]:
    """Anchor both frame-1 clouds against one shared sphere and line set; delta stays per cloud."""
    if sphere is None:
        sphere = bounding_sphere(np.vstack([source_points, edited_points]))
    lines = sample_lines(sphere, n_rays, seed)
    logger.info(f"Bounding sphere r={sphere.radius:.4f}, {len(lines)} lines")
    return anchor_cloud(source_points, lines, k), anchor_cloud(edited_points, lines, k)
