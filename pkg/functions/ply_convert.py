#!/usr/bin/env python3
"""
Best-effort reader/writer for the common 3D Gaussian splatting PLY layout:
x, y, z, f_dc_0..2, f_rest_* (channel-major), opacity (logit),
scale_0..2 (log), rot_0..3 (w, x, y, z, not necessarily normalized).
"""

import logging
from pathlib import Path

import numpy as np
from plyfile import PlyData, PlyElement

from functions.errors import MalformedFile
from functions.scene_model import MAX_SH_DEGREE, GaussianCloud, sh_coefficient_count

logger = logging.getLogger(__name__)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def _logit(p: np.ndarray) -> np.ndarray:
    p = np.clip(p, 1e-6, 1.0 - 1e-6)
    return np.log(p / (1.0 - p))


def load_ply_cloud(path, max_degree: int = MAX_SH_DEGREE) -> GaussianCloud:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"PLY file not found: {path}")
    try:
        vertex = PlyData.read(str(path))["vertex"]
    except Exception as e:
        raise MalformedFile(f"{path}: not a readable PLY with a vertex element ({e})") from e

    names = {p.name for p in vertex.properties}
    required = {"x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity",
                "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"}
    missing = sorted(required - names)
    if missing:
        raise MalformedFile(f"{path}: missing vertex properties {', '.join(missing)}")

    xyz = np.stack([np.asarray(vertex[c], dtype=np.float64) for c in ("x", "y", "z")], axis=1)
    n = xyz.shape[0]
    rest_names = sorted((p for p in names if p.startswith("f_rest_")), key=lambda x: int(x.split("_")[-1]))
    per_channel = len(rest_names) // 3
    degree = int(round(np.sqrt(per_channel + 1))) - 1
    if len(rest_names) % 3 or sh_coefficient_count(degree) != per_channel + 1:
        raise MalformedFile(f"{path}: {len(rest_names)} f_rest properties do not form a SH degree")

    sh = np.zeros((n, 3, per_channel + 1))
    for c in range(3):
        sh[:, c, 0] = np.asarray(vertex[f"f_dc_{c}"], dtype=np.float64)
    if per_channel:
        rest = np.stack([np.asarray(vertex[name], dtype=np.float64) for name in rest_names], axis=1)
        sh[:, :, 1:] = rest.reshape(n, 3, per_channel)
    if degree > max_degree:
        logger.warning(f"{path}: truncating SH degree {degree} to {max_degree}")
        sh = sh[:, :, :sh_coefficient_count(max_degree)]
        degree = max_degree

    sigma = _sigmoid(np.asarray(vertex["opacity"], dtype=np.float64))
    s = np.exp(np.stack([np.asarray(vertex[f"scale_{i}"], dtype=np.float64) for i in range(3)], axis=1))
    q = np.stack([np.asarray(vertex[f"rot_{i}"], dtype=np.float64) for i in range(4)], axis=1)
    q = q / np.linalg.norm(q, axis=1, keepdims=True)
    logger.info(f"Read {n} Gaussians (SH degree {degree}) from {path}")
    return GaussianCloud(xyz, q, s, sigma, sh, sh_degree=degree)


def save_ply_cloud(cloud: GaussianCloud, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    k = sh_coefficient_count(cloud.sh_degree)
    fields = ["x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2"]
    fields += [f"f_rest_{i}" for i in range(3 * (k - 1))]
    fields += ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
    columns = np.concatenate([
        cloud.mu,
        cloud.sh[:, :, 0],
        cloud.sh[:, :, 1:].reshape(len(cloud), -1),
        _logit(cloud.sigma)[:, None],
        np.log(cloud.s),
        cloud.q,
    ], axis=1)
    records = np.empty(len(cloud), dtype=[(name, "f4") for name in fields])
    for i, name in enumerate(fields):
        records[name] = columns[:, i]
    PlyData([PlyElement.describe(records, "vertex")]).write(str(path))
    return path
