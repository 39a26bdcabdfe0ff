#!/usr/bin/env python3
"""
Deterministic test scenes with closed-form motion, plus a direct-domain
Sinkhorn used as an independent reference for the log-domain solver.

Scenes:
  rigid      a jittered lattice blob rotating about an axis through its
             centroid; the edit recolors it and can clone 10% of it.
  occlusion  an opaque static slab hiding a small back layer whose color is
             corrupted in the edit; the back layer slides out sideways, so the
             corruption only shows after frame 1.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from functions.config import SinkhornConfig, write_config
from functions.errors import OracleSizeExceeded
from functions.scene_model import (
    Camera,
    DeformationField,
    GaussianCloud,
    quat_normalize,
    rotation_about_axis,
    save_cloud,
    save_deformation,
)
from functions.spherical_harmonics import sh_from_rgb
from functions.uot_match import TransportPlan

logger = logging.getLogger(__name__)

ORACLE_MAX_SIZE = 8
CLONE_FRACTION = 0.1
CLONE_JITTER = 0.01


@dataclass
class OracleScene:
    source: GaussianCloud
    edited: GaussianCloud
    deformation: DeformationField
    cameras: List[Camera]
    expected_positions: Dict[int, np.ndarray]
    description: str
    clone_parents: Optional[np.ndarray] = None
    extra: Dict = field(default_factory=dict)

    @property
    def n_frames(self) -> int:
        return self.deformation.n_frames

    def write(self, directory, pipeline: Optional[Dict] = None) -> Path:
        """Write clouds, tabulated deformation and a config.json; returns the config path."""
        directory = Path(directory)
        save_cloud(self.source, directory / "source.g4dc")
        save_cloud(self.edited, directory / "edited.g4dc")
        save_deformation(self.deformation, directory / "deformation.g4df", cloud=self.source)
        return write_config(directory / "config.json", "source.g4dc", "edited.g4dc", "deformation.g4df",
                            self.cameras, pipeline=pipeline, description=self.description)


def _random_quaternions(rng: np.random.Generator, n: int) -> np.ndarray:
    q = rng.normal(size=(n, 4))
    q = quat_normalize(q)
    return np.where(q[:, :1] < 0, -q, q)


def _lattice_blob(n: int, rng: np.random.Generator) -> Tuple[np.ndarray, float]:
    """n points on a jittered cubic lattice inside the unit ball, centroid at the origin."""
    spacing = (4.0 / 3.0 * np.pi / max(n, 1)) ** (1.0 / 3.0)
    while True:
        ticks = np.arange(-1.0, 1.0 + 1e-9, spacing)
        grid = np.stack(np.meshgrid(ticks, ticks, ticks, indexing="ij"), axis=-1).reshape(-1, 3)
        grid = grid[np.linalg.norm(grid, axis=1) <= 1.0 - spacing]
        if grid.shape[0] >= n:
            break
        spacing *= 0.95
    order = np.argsort(np.linalg.norm(grid, axis=1), kind="stable")[:n]
    points = grid[order] + rng.uniform(-0.2 * spacing, 0.2 * spacing, size=(n, 3))
    points -= points.mean(axis=0)
    return points, spacing


def _ring_cameras(target: Sequence[float], distance: float, n_views: int, width: int, height: int,
                  focal_scale: float, spread_degrees: float) -> List[Camera]:
    target = np.asarray(target, dtype=np.float64)
    cameras = []
    for v in range(n_views):
        angle = np.deg2rad(spread_degrees) * (0.0 if n_views == 1 else (2.0 * v / (n_views - 1) - 1.0))
        eye = target + distance * np.array([np.sin(angle), 0.0, -np.cos(angle)])
        cameras.append(Camera.look_at(eye, target, up=(0.0, 1.0, 0.0), fx=focal_scale * width,
                                      width=width, height=height))
    return cameras


def make_rigid_scene(n_gaussians: int = 200, axis: Sequence[float] = (0.0, 0.0, 1.0), omega: float = 0.1,
                     n_frames: int = 5, seed: int = 0, clone: bool = False, sh_degree: int = 0,
                     width: int = 64, height: int = 64, identity: bool = False) -> OracleScene:
    """Rigid rotation about an axis through the centroid. identity=True leaves the
    edited cloud equal to the source (self-propagation); otherwise the edit recolors
    and, with clone=True, appends jittered copies of 10% of the Gaussians."""
    rng = np.random.default_rng(seed)
    mu, spacing = _lattice_blob(n_gaussians, rng)
    q = _random_quaternions(rng, n_gaussians)
    s = 0.02 * spacing * rng.uniform(0.8, 1.2, size=(n_gaussians, 3))
    sigma = rng.uniform(0.5, 1.0, size=n_gaussians)
    colors = rng.uniform(0.2, 0.8, size=(n_gaussians, 3))
    source = GaussianCloud(mu, q, s, sigma, sh_from_rgb(colors, sh_degree), sh_degree=sh_degree)

    recolor = np.clip(1.0 - colors + rng.uniform(-0.05, 0.05, size=colors.shape), 0.0, 1.0)
    edited = source if identity else source.replace(sh=sh_from_rgb(recolor, sh_degree))
    parents = None
    if clone and not identity:
        n_clones = max(1, int(round(CLONE_FRACTION * n_gaussians)))
        parents = np.sort(rng.choice(n_gaussians, size=n_clones, replace=False))
        clone_mu = edited.mu[parents] + rng.normal(scale=CLONE_JITTER, size=(n_clones, 3))
        edited = GaussianCloud(np.vstack([edited.mu, clone_mu]), np.vstack([edited.q, edited.q[parents]]),
                               np.vstack([edited.s, edited.s[parents]]),
                               np.concatenate([edited.sigma, edited.sigma[parents]]),
                               np.concatenate([edited.sh, edited.sh[parents]]), sh_degree=sh_degree)

    pivot = source.mu.mean(axis=0)
    deformation = DeformationField.rigid_rotation(axis, omega, n_frames, pivot=pivot)
    expected = {t: rotation_about_axis(edited.mu, axis, omega * (t - 1), pivot) for t in range(1, n_frames + 1)}
    cameras = _ring_cameras(pivot, 3.5, 2, width, height, focal_scale=1.0, spread_degrees=30.0)
    return OracleScene(source, edited, deformation, cameras, expected,
                       description=f"rigid rotation, n={n_gaussians}, omega={omega}, T={n_frames}, "
                                   f"{'identity' if identity else ('recolor+clone' if clone else 'recolor')} edit",
                       clone_parents=parents, extra={"pivot": pivot.tolist(), "spacing": spacing})


def _slab(xs: np.ndarray, ys: np.ndarray, z: float) -> np.ndarray:
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    return np.stack([gx.ravel(), gy.ravel(), np.full(gx.size, z)], axis=1)


OCCLUDER_COLOR = (0.3, 0.5, 0.6)
CORRUPTION = (0.3, -0.25, 0.25)
CORRUPT_BAND1 = 0.1
BACK_SLIDE = 1.8


def make_occlusion_scene(seed: int = 0, width: int = 128, height: int = 128, n_views: int = 8,
                         n_frames: int = 10) -> OracleScene:
    """Static two-layer slab in front (z = 0, 0.05), a 3x3 layer behind it (z = 0.3)
    sliding +x by BACK_SLIDE over the sequence. The back layer shares the slab's clean
    color, so the warped frame-1 render is the exact clean answer wherever it shows.

    The edit recolors the back layer and gives it a view-dependent band; every
    corrupted color stays inside [0, 1].
    """
    rng = np.random.default_rng(seed)
    ticks = np.round(np.arange(-6, 7) * 0.1, 10)
    front = np.vstack([_slab(ticks, ticks, 0.0), _slab(ticks, ticks, 0.05)])
    back_ticks = np.array([-0.1, 0.0, 0.1])
    back = _slab(back_ticks, back_ticks, 0.3)
    n_front, n_back = front.shape[0], back.shape[0]
    n = n_front + n_back

    mu = np.vstack([front, back])
    q = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
    s = np.vstack([np.full((n_front, 3), 0.12), np.full((n_back, 3), 0.08)])
    s[:, 2] *= 0.25
    sigma = np.full(n, 0.99)
    clean = sh_from_rgb(np.tile(OCCLUDER_COLOR, (n, 1)), degree=1)
    source = GaussianCloud(mu, q, s, sigma, clean, sh_degree=1)

    corrupted = np.array(clean, copy=True)
    back_rows = np.arange(n_front, n)
    corrupted[back_rows] = sh_from_rgb(np.tile(np.add(OCCLUDER_COLOR, CORRUPTION), (n_back, 1)), degree=1)
    corrupted[back_rows, :, 1:] = CORRUPT_BAND1
    edited = source.replace(sh=corrupted)

    shift = np.zeros((n_frames, n, 3))
    if n_frames > 1:
        steps = np.arange(n_frames) / (n_frames - 1)
        shift[:, back_rows, 0] = BACK_SLIDE * steps[:, None]
    deformation = DeformationField(n_frames, "tabulated", delta_mu=shift, delta_q=np.zeros((n_frames, n, 4)),
                                   delta_s=np.zeros((n_frames, n, 3)))
    expected = {t: edited.mu + shift[t - 1] for t in range(1, n_frames + 1)}

    # small random yaw spread keeps every view distinct under a fixed seed
    spread = 8.0 * rng.uniform(0.75, 1.0)
    cameras = _ring_cameras((0.8, 0.0, 0.0), 4.0, n_views, width, height, focal_scale=1.25, spread_degrees=spread)
    return OracleScene(source, edited, deformation, cameras, expected,
                       description=f"occlusion reveal, {n_views} views, T={n_frames}, {width}x{height}",
                       extra={"back_rows": back_rows.tolist(), "clean_sh": clean})


def brute_force_sinkhorn(D: np.ndarray, config: SinkhornConfig = None, max_iters: int = 100000,
                         tol: float = 1e-13) -> TransportPlan:
    """Direct-domain scaling iterations u = (a / K v)^tau1, v = (b / K^T u)^tau2."""
    config = config or SinkhornConfig()
    D = np.asarray(D, dtype=np.float64)
    n, m = D.shape
    if n > ORACLE_MAX_SIZE or m > ORACLE_MAX_SIZE:
        raise OracleSizeExceeded(f"reference solver handles at most {ORACLE_MAX_SIZE}x{ORACLE_MAX_SIZE}, got {n}x{m}")
    K = np.exp(-D / config.lambda0)
    a = np.full(n, 1.0 / n)
    b = np.full(m, 1.0 / m)
    tau1 = config.lambda1 / (config.lambda1 + config.lambda0)
    tau2 = config.lambda2 / (config.lambda2 + config.lambda0)
    u = np.ones(n)
    v = np.ones(m)
    converged = False
    iteration = 0
    change = 0.0
    for iteration in range(1, max_iters + 1):
        u_next = (a / (K @ v)) ** tau1
        v_next = (b / (K.T @ u_next)) ** tau2
        change = max(np.max(np.abs(u_next / u - 1.0)), np.max(np.abs(v_next / v - 1.0)))
        u, v = u_next, v_next
        if change < tol:
            converged = True
            break
    P = u[:, None] * K * v[None, :]
    return TransportPlan(P=P, converged=converged, iterations=iteration, marginal_err=float(change))
