#!/usr/bin/env python3
"""
Scene model: Gaussian clouds, deformation fields, cameras and edit sessions.

Holds the core domain types, enforces their invariants, and reads/writes the
little-endian binary formats:

  cloud file        "G4DC" | version u32 | count u64 | sh_degree u8 |
                    per Gaussian: 3 f32 mu, 4 f32 q (w,x,y,z), 3 f32 s, f32 sigma,
                    3*(deg+1)^2 f32 sh (channel-major)
  deformation file  "G4DF" | version u32 | n_frames u32 | count u64 |
                    per frame, per Gaussian: 3 f32 dmu, 4 f32 dq, 3 f32 ds

All types are immutable after construction (numpy arrays are flagged
read-only) and every operation returns new values. Frame indices are 1-based.
"""

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from functions.errors import (
    DivisionDegenerate,
    FrameOutOfRange,
    InvariantViolation,
    MalformedFile,
    SizeMismatch,
)

logger = logging.getLogger(__name__)

CLOUD_MAGIC = b"G4DC"
DEFORMATION_MAGIC = b"G4DF"
FORMAT_VERSION = 1

CLOUD_HEADER = struct.Struct("<4sIQB")
DEFORMATION_HEADER = struct.Struct("<4sIIQ")

QUAT_TOLERANCE = 1e-6
SIGMA_CLAMP_TOLERANCE = 1e-4
MIN_SCALE_FOR_RATIO = 1e-9
MAX_SH_DEGREE = 3


def sh_coefficient_count(sh_degree: int) -> int:
    return (sh_degree + 1) ** 2


# ---------------------------------------------------------------------------
# Quaternion helpers (w, x, y, z order throughout)
# ---------------------------------------------------------------------------

def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    norms = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norms < 1e-12):
        raise InvariantViolation("quaternion with zero norm cannot be normalized")
    return q / norms


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a * b, broadcasting over leading axes."""
    aw, ax, ay, az = np.moveaxis(np.asarray(a, dtype=np.float64), -1, 0)
    bw, bx, by, bz = np.moveaxis(np.asarray(b, dtype=np.float64), -1, 0)
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def quat_from_axis_angle(axis: Sequence[float], angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    norm = np.linalg.norm(axis)
    if norm < 1e-12:
        raise InvariantViolation("rotation axis must be nonzero")
    axis = axis / norm
    half = 0.5 * angle
    return np.concatenate([[np.cos(half)], np.sin(half) * axis])


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """(..., 4) unit quaternions -> (..., 3, 3) rotation matrices."""
    q = quat_normalize(q)
    w, x, y, z = np.moveaxis(q, -1, 0)
    rot = np.stack([
        1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
    ], axis=-1)
    return rot.reshape(q.shape[:-1] + (3, 3))


def rotation_about_axis(points: np.ndarray, axis: Sequence[float], angle: float,
                        pivot: Sequence[float] = (0.0, 0.0, 0.0)) -> np.ndarray:
    """Rotate points by `angle` radians about the line through `pivot` along `axis`."""
    rot = quat_to_rotmat(quat_from_axis_angle(axis, angle))
    pivot = np.asarray(pivot, dtype=np.float64)
    return (np.asarray(points, dtype=np.float64) - pivot) @ rot.T + pivot


# ---------------------------------------------------------------------------
# Gaussians
# ---------------------------------------------------------------------------

def _readonly(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=np.float64, copy=True)
    array.flags.writeable = False
    return array


@dataclass(frozen=True)
class Gaussian:
    """One anisotropic splat. sh has shape (3, (degree+1)^2)."""
    mu: np.ndarray
    q: np.ndarray
    s: np.ndarray
    sigma: float
    sh: np.ndarray

    def __post_init__(self):
        cloud = GaussianCloud(self.mu[None], self.q[None], self.s[None],
                              np.array([self.sigma]), np.asarray(self.sh)[None],
                              sh_degree=_degree_from_count(np.asarray(self.sh).shape[-1]))
        object.__setattr__(self, "mu", cloud.mu[0])
        object.__setattr__(self, "q", cloud.q[0])
        object.__setattr__(self, "s", cloud.s[0])
        object.__setattr__(self, "sigma", float(cloud.sigma[0]))
        object.__setattr__(self, "sh", cloud.sh[0])

    @property
    def covariance(self) -> np.ndarray:
        rot = quat_to_rotmat(self.q)
        scale = np.diag(self.s)
        return rot @ scale @ scale.T @ rot.T


def _degree_from_count(count: int) -> int:
    degree = int(round(np.sqrt(count))) - 1
    if degree < 0 or sh_coefficient_count(degree) != count:
        raise InvariantViolation(f"{count} SH coefficients per channel is not a square number")
    return degree


class GaussianCloud:
    """Ordered Gaussians stored as parallel arrays.

    mu (N,3), q (N,4), s (N,3), sigma (N,), sh (N,3,K). Index identity is the
    Gaussian identity: deform/save/load never reorder.
    """

    def __init__(self, mu, q, s, sigma, sh, sh_degree: int, frame: int = 1,
                 clamp_sigma: bool = True):
        if not 0 <= sh_degree <= MAX_SH_DEGREE:
            raise InvariantViolation(f"sh_degree must be in [0, {MAX_SH_DEGREE}], got {sh_degree}")
        if frame < 1:
            raise FrameOutOfRange(f"frame index is 1-based, got {frame}")
        mu = np.asarray(mu, dtype=np.float64).reshape(-1, 3)
        n = mu.shape[0]
        q = np.asarray(q, dtype=np.float64).reshape(n, 4)
        s = np.asarray(s, dtype=np.float64).reshape(n, 3)
        sigma = np.asarray(sigma, dtype=np.float64).reshape(n)
        k = sh_coefficient_count(sh_degree)
        sh = np.asarray(sh, dtype=np.float64)
        if sh.size != n * 3 * k:
            raise SizeMismatch(f"expected {n}x3x{k} SH coefficients for degree {sh_degree}, got {sh.shape}")
        sh = sh.reshape(n, 3, k)

        for name, values in (("mu", mu), ("q", q), ("s", s), ("sigma", sigma), ("sh", sh)):
            if not np.all(np.isfinite(values)):
                raise InvariantViolation(f"non-finite values in {name}")

        norms = np.linalg.norm(q, axis=1)
        if np.any(norms < 1e-12):
            raise InvariantViolation("quaternion with zero norm cannot be normalized")
        drift = np.abs(norms - 1.0) > QUAT_TOLERANCE
        if np.any(drift):
            q = q.copy()
            q[drift] /= norms[drift, None]

        if np.any(s <= 0):
            bad = int(np.argmax(np.any(s <= 0, axis=1)))
            raise InvariantViolation(f"scale must be strictly positive (Gaussian {bad}: {s[bad].tolist()})")

        outside = (sigma < 0) | (sigma > 1)
        if np.any(outside):
            beyond = (sigma < -SIGMA_CLAMP_TOLERANCE) | (sigma > 1 + SIGMA_CLAMP_TOLERANCE)
            if np.any(beyond) or not clamp_sigma:
                bad = int(np.argmax(outside))
                raise InvariantViolation(f"opacity {sigma[bad]} outside [0, 1] (Gaussian {bad})")
            sigma = np.clip(sigma, 0.0, 1.0)

        self.mu = _readonly(mu)
        self.q = _readonly(q)
        self.s = _readonly(s)
        self.sigma = _readonly(sigma)
        self.sh = _readonly(sh)
        self.sh_degree = int(sh_degree)
        self.frame = int(frame)

    @classmethod
    def empty(cls, sh_degree: int = 0, frame: int = 1) -> "GaussianCloud":
        k = sh_coefficient_count(sh_degree)
        return cls(np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3)), np.zeros(0),
                   np.zeros((0, 3, k)), sh_degree=sh_degree, frame=frame)

    @classmethod
    def from_gaussians(cls, gaussians: List[Gaussian], sh_degree: int, frame: int = 1) -> "GaussianCloud":
        if not gaussians:
            return cls.empty(sh_degree, frame)
        k = sh_coefficient_count(sh_degree)
        for g in gaussians:
            if g.sh.shape != (3, k):
                raise SizeMismatch(f"Gaussian SH shape {g.sh.shape} does not match degree {sh_degree}")
        return cls(np.stack([g.mu for g in gaussians]), np.stack([g.q for g in gaussians]),
                   np.stack([g.s for g in gaussians]), np.array([g.sigma for g in gaussians]),
                   np.stack([g.sh for g in gaussians]), sh_degree=sh_degree, frame=frame)

    def __len__(self) -> int:
        return self.mu.shape[0]

    def __getitem__(self, index: int) -> Gaussian:
        return Gaussian(self.mu[index], self.q[index], self.s[index], float(self.sigma[index]), self.sh[index])

    def __repr__(self) -> str:
        return f"GaussianCloud(n={len(self)}, sh_degree={self.sh_degree}, frame={self.frame})"

    def replace(self, **changes) -> "GaussianCloud":
        """New cloud with some arrays (mu, q, s, sigma, sh) or frame swapped out."""
        values = dict(mu=self.mu, q=self.q, s=self.s, sigma=self.sigma, sh=self.sh, frame=self.frame)
        values.update(changes)
        return GaussianCloud(values["mu"], values["q"], values["s"], values["sigma"], values["sh"],
                             sh_degree=self.sh_degree, frame=values["frame"])

    def rotations(self) -> np.ndarray:
        return quat_to_rotmat(self.q)

    def covariances(self) -> np.ndarray:
        """Sigma = R S S^T R^T per Gaussian, shape (N, 3, 3)."""
        rot = self.rotations()
        scaled = rot * self.s[:, None, :]
        return scaled @ np.swapaxes(scaled, 1, 2)

    def inverse_covariances(self) -> np.ndarray:
        rot = self.rotations()
        scaled = rot / self.s[:, None, :]
        return scaled @ np.swapaxes(scaled, 1, 2)

    def equals(self, other: "GaussianCloud") -> bool:
        return (len(self) == len(other) and self.sh_degree == other.sh_degree
                and all(np.array_equal(a, b) for a, b in (
                    (self.mu, other.mu), (self.q, other.q), (self.s, other.s),
                    (self.sigma, other.sigma), (self.sh, other.sh))))


# ---------------------------------------------------------------------------
# Deformation fields
# ---------------------------------------------------------------------------

ANALYTIC_MOTIONS = ("translation", "rigid_rotation", "sinusoidal_shear")


@dataclass(frozen=True)
class DeformationField:
    """Per-frame, per-Gaussian deltas for the source cloud.

    kind='tabulated' carries arrays delta_mu (T,N,3), delta_q (T,N,4), delta_s (T,N,3)
    indexed by t-1. kind='analytic' carries a named motion and its parameters and is
    evaluated on whatever cloud it is applied to.
    """
    n_frames: int
    kind: str
    delta_mu: Optional[np.ndarray] = None
    delta_q: Optional[np.ndarray] = None
    delta_s: Optional[np.ndarray] = None
    motion: Optional[str] = None
    params: Dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n_frames < 1:
            raise InvariantViolation(f"n_frames must be >= 1, got {self.n_frames}")
        if self.kind == "tabulated":
            arrays = [np.asarray(a, dtype=np.float64) for a in (self.delta_mu, self.delta_q, self.delta_s)]
            widths = (3, 4, 3)
            n = arrays[0].shape[1] if arrays[0].ndim == 3 else -1
            for name, array, width in zip(("delta_mu", "delta_q", "delta_s"), arrays, widths):
                if array.shape != (self.n_frames, n, width):
                    raise SizeMismatch(f"{name} has shape {array.shape}, expected ({self.n_frames}, {n}, {width})")
                if not np.all(np.isfinite(array)):
                    raise InvariantViolation(f"non-finite values in {name}")
                if np.any(array[0] != 0):
                    raise InvariantViolation(f"{name} at frame 1 must be exactly zero")
            for name, array in zip(("delta_mu", "delta_q", "delta_s"), arrays):
                object.__setattr__(self, name, _readonly(array))
        elif self.kind == "analytic":
            if self.motion not in ANALYTIC_MOTIONS:
                raise InvariantViolation(f"unknown analytic motion {self.motion!r}; expected one of {ANALYTIC_MOTIONS}")
        else:
            raise InvariantViolation(f"unknown deformation kind {self.kind!r}")

    @property
    def count(self) -> Optional[int]:
        return None if self.kind == "analytic" else self.delta_mu.shape[1]

    @classmethod
    def translation(cls, velocity: Sequence[float], n_frames: int) -> "DeformationField":
        return cls(n_frames, "analytic", motion="translation",
                   params={"velocity": [float(v) for v in velocity]})

    @classmethod
    def rigid_rotation(cls, axis: Sequence[float], omega: float, n_frames: int,
                       pivot: Sequence[float] = (0.0, 0.0, 0.0)) -> "DeformationField":
        return cls(n_frames, "analytic", motion="rigid_rotation",
                   params={"axis": [float(a) for a in axis], "omega": float(omega),
                           "pivot": [float(p) for p in pivot]})

    @classmethod
    def sinusoidal_shear(cls, amplitude: float, frequency: float, n_frames: int,
                         shear_axis: int = 0, reference_axis: int = 1) -> "DeformationField":
        return cls(n_frames, "analytic", motion="sinusoidal_shear",
                   params={"amplitude": float(amplitude), "frequency": float(frequency),
                           "shear_axis": int(shear_axis), "reference_axis": int(reference_axis)})

    def check_frame(self, t: int):
        if not 1 <= t <= self.n_frames:
            raise FrameOutOfRange(f"frame {t} outside [1, {self.n_frames}]")

    def deltas(self, cloud: GaussianCloud, t: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(delta_mu, delta_q, delta_s) for every Gaussian of `cloud` at frame t."""
        self.check_frame(t)
        n = len(cloud)
        if self.kind == "tabulated":
            if self.count != n:
                raise SizeMismatch(f"deformation covers {self.count} Gaussians, cloud has {n}")
            return self.delta_mu[t - 1], self.delta_q[t - 1], self.delta_s[t - 1]

        zeros = (np.zeros((n, 3)), np.zeros((n, 4)), np.zeros((n, 3)))
        if t == 1:
            return zeros
        steps = t - 1
        delta_mu, delta_q, delta_s = zeros
        if self.motion == "translation":
            delta_mu = np.tile(np.asarray(self.params["velocity"]) * steps, (n, 1))
        elif self.motion == "rigid_rotation":
            angle = self.params["omega"] * steps
            moved = rotation_about_axis(cloud.mu, self.params["axis"], angle, self.params["pivot"])
            delta_mu = moved - cloud.mu
            turn = quat_from_axis_angle(self.params["axis"], angle)
            delta_q = quat_multiply(turn[None, :], cloud.q) - cloud.q
        elif self.motion == "sinusoidal_shear":
            offset = self.params["amplitude"] * np.sin(self.params["frequency"] * steps)
            delta_mu = np.zeros((n, 3))
            delta_mu[:, self.params["shear_axis"]] = offset * cloud.mu[:, self.params["reference_axis"]]
        return delta_mu, delta_q, delta_s

    def tabulate(self, cloud: GaussianCloud) -> "DeformationField":
        """Evaluate every frame on `cloud` and return the tabulated equivalent."""
        if self.kind == "tabulated":
            return self
        frames = [self.deltas(cloud, t) for t in range(1, self.n_frames + 1)]
        return DeformationField(
            self.n_frames, "tabulated",
            delta_mu=np.stack([f[0] for f in frames]),
            delta_q=np.stack([f[1] for f in frames]),
            delta_s=np.stack([f[2] for f in frames]),
        )


def deform_source(cloud: GaussianCloud, deformation: DeformationField, t: int) -> GaussianCloud:
    """Apply the field's frame-t deltas: mu+dmu, normalize(q+dq), s+ds; sigma/sh frozen."""
    if cloud.frame != 1:
        raise FrameOutOfRange(f"deform_source expects the frame-1 cloud, got frame {cloud.frame}")
    delta_mu, delta_q, delta_s = deformation.deltas(cloud, t)
    if t == 1:
        return cloud
    return cloud.replace(mu=cloud.mu + delta_mu, q=quat_normalize(cloud.q + delta_q),
                         s=cloud.s + delta_s, frame=t)


def source_delta(cloud: GaussianCloud, deformation: DeformationField,
                 t: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Frame-t deltas with scale converted to the multiplicative ratio (s + ds) / s."""
    if cloud.frame != 1:
        raise FrameOutOfRange(f"source_delta expects the frame-1 cloud, got frame {cloud.frame}")
    delta_mu, delta_q, delta_s = deformation.deltas(cloud, t)
    if np.any(cloud.s < MIN_SCALE_FOR_RATIO):
        raise DivisionDegenerate("scale component below 1e-9 cannot form a ratio")
    ratio = (cloud.s + delta_s) / cloud.s
    if np.any(ratio <= 0):
        raise InvariantViolation(f"frame {t} deformation drives a scale to a non-positive value")
    return np.array(delta_mu), np.array(delta_q), ratio


# ---------------------------------------------------------------------------
# Cameras
# ---------------------------------------------------------------------------

CAMERA_MODELS = ("pinhole", "orthographic")


@dataclass(frozen=True)
class Camera:
    """World-to-camera rigid transform plus intrinsics. Camera looks down +z, image y down."""
    model: str
    rotation: np.ndarray
    translation: np.ndarray
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    near: float = 0.01
    far: float = 100.0

    def __post_init__(self):
        if self.model not in CAMERA_MODELS:
            raise InvariantViolation(f"camera model must be one of {CAMERA_MODELS}, got {self.model!r}")
        rotation = _readonly(np.asarray(self.rotation).reshape(3, 3))
        translation = _readonly(np.asarray(self.translation).reshape(3))
        if not np.allclose(rotation @ rotation.T, np.eye(3), atol=1e-6):
            raise InvariantViolation("camera rotation is not orthonormal")
        if self.width < 1 or self.height < 1:
            raise InvariantViolation(f"image size must be >= 1, got {self.width}x{self.height}")
        if self.fx <= 0 or self.fy <= 0:
            raise InvariantViolation("focal lengths must be positive")
        if not self.near < self.far:
            raise InvariantViolation(f"near ({self.near}) must be < far ({self.far})")
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 1.0, 0.0), model: str = "pinhole", fx: float = 100.0,
                fy: float = None, width: int = 64, height: int = 64, near: float = 0.01,
                far: float = 100.0) -> "Camera":
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(up, dtype=np.float64))
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        rotation = np.stack([right, down, forward])
        return cls(model, rotation, -rotation @ eye, fx, fy if fy is not None else fx,
                   (width - 1) / 2.0, (height - 1) / 2.0, width, height, near, far)

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    @property
    def view_axis(self) -> np.ndarray:
        """World-space direction the camera looks along."""
        return self.rotation[2].copy()

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def project_points(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """World points -> (pixel coordinates (N,2), camera depth (N,))."""
        cam = self.to_camera(points)
        depth = cam[:, 2]
        if self.model == "pinhole":
            safe = np.where(np.abs(depth) < 1e-12, 1e-12, depth)
            u = self.fx * cam[:, 0] / safe + self.cx
            v = self.fy * cam[:, 1] / safe + self.cy
        else:
            u = self.fx * cam[:, 0] + self.cx
            v = self.fy * cam[:, 1] + self.cy
        return np.stack([u, v], axis=1), depth

    def view_directions(self, points: np.ndarray) -> np.ndarray:
        """Unit directions camera -> point (orthographic: the fixed view axis)."""
        points = np.asarray(points, dtype=np.float64)
        if self.model == "orthographic":
            return np.tile(self.view_axis, (points.shape[0], 1))
        dirs = points - self.center
        norms = np.linalg.norm(dirs, axis=1, keepdims=True)
        return dirs / np.maximum(norms, 1e-12)

    def to_dict(self) -> Dict:
        return {
            "model": self.model,
            "rotation": self.rotation.tolist(),
            "translation": self.translation.tolist(),
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
            "near": self.near, "far": self.far,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "Camera":
        try:
            return cls(data["model"], np.asarray(data["rotation"], dtype=np.float64),
                       np.asarray(data["translation"], dtype=np.float64),
                       float(data["fx"]), float(data["fy"]), float(data["cx"]), float(data["cy"]),
                       int(data["width"]), int(data["height"]),
                       float(data.get("near", 0.01)), float(data.get("far", 100.0)))
        except KeyError as e:
            raise InvariantViolation(f"camera entry missing field {e}") from e


# ---------------------------------------------------------------------------
# Edit session
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EditSession:
    source_cloud: GaussianCloud
    edited_cloud: GaussianCloud
    deformation: DeformationField
    cameras: List[Camera]
    config: object

    def __post_init__(self):
        if self.source_cloud.frame != 1 or self.edited_cloud.frame != 1:
            raise FrameOutOfRange("source and edited clouds must both be frame 1")
        if self.deformation.kind == "tabulated" and self.deformation.count != len(self.source_cloud):
            raise SizeMismatch(f"deformation covers {self.deformation.count} Gaussians, "
                               f"source cloud has {len(self.source_cloud)}")


# ---------------------------------------------------------------------------
# Binary I/O
# ---------------------------------------------------------------------------

def _cloud_dtype(sh_degree: int) -> np.dtype:
    k = sh_coefficient_count(sh_degree)
    return np.dtype([("mu", "<f4", (3,)), ("q", "<f4", (4,)), ("s", "<f4", (3,)),
                     ("sigma", "<f4"), ("sh", "<f4", (3, k))])


def cloud_to_bytes(cloud: GaussianCloud) -> bytes:
    records = np.zeros(len(cloud), dtype=_cloud_dtype(cloud.sh_degree))
    records["mu"] = cloud.mu
    records["q"] = cloud.q
    records["s"] = cloud.s
    records["sigma"] = cloud.sigma
    records["sh"] = cloud.sh
    header = CLOUD_HEADER.pack(CLOUD_MAGIC, FORMAT_VERSION, len(cloud), cloud.sh_degree)
    return header + records.tobytes()


def cloud_from_bytes(payload: bytes, frame: int = 1, source: str = "<bytes>") -> GaussianCloud:
    if len(payload) < CLOUD_HEADER.size:
        raise MalformedFile(f"{source}: truncated header")
    magic, version, count, sh_degree = CLOUD_HEADER.unpack_from(payload)
    if magic != CLOUD_MAGIC:
        raise MalformedFile(f"{source}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise MalformedFile(f"{source}: unsupported version {version}")
    if sh_degree > MAX_SH_DEGREE:
        raise MalformedFile(f"{source}: sh_degree {sh_degree} > {MAX_SH_DEGREE}")
    dtype = _cloud_dtype(sh_degree)
    expected = CLOUD_HEADER.size + count * dtype.itemsize
    if len(payload) != expected:
        raise MalformedFile(f"{source}: length {len(payload)} bytes, header implies {expected}")
    records = np.frombuffer(payload, dtype=dtype, count=count, offset=CLOUD_HEADER.size)
    return GaussianCloud(records["mu"], records["q"], records["s"], records["sigma"], records["sh"],
                         sh_degree=sh_degree, frame=frame)


def load_cloud(path, frame: int = 1) -> GaussianCloud:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Cloud file not found: {path}")
    cloud = cloud_from_bytes(path.read_bytes(), frame=frame, source=str(path))
    logger.debug(f"Loaded {len(cloud)} Gaussians (degree {cloud.sh_degree}) from {path}")
    return cloud


def save_cloud(cloud: GaussianCloud, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(cloud_to_bytes(cloud))
    return path


def deformation_to_bytes(deformation: DeformationField, cloud: GaussianCloud = None) -> bytes:
    if deformation.kind == "analytic":
        if cloud is None:
            raise SizeMismatch("an analytic field needs the source cloud to be tabulated")
        deformation = deformation.tabulate(cloud)
    packed = np.concatenate([deformation.delta_mu, deformation.delta_q, deformation.delta_s], axis=2)
    header = DEFORMATION_HEADER.pack(DEFORMATION_MAGIC, FORMAT_VERSION, deformation.n_frames, deformation.count)
    return header + packed.astype("<f4").tobytes()


def deformation_from_bytes(payload: bytes, source: str = "<bytes>") -> DeformationField:
    if len(payload) < DEFORMATION_HEADER.size:
        raise MalformedFile(f"{source}: truncated header")
    magic, version, n_frames, count = DEFORMATION_HEADER.unpack_from(payload)
    if magic != DEFORMATION_MAGIC:
        raise MalformedFile(f"{source}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise MalformedFile(f"{source}: unsupported version {version}")
    expected = DEFORMATION_HEADER.size + n_frames * count * 10 * 4
    if len(payload) != expected:
        raise MalformedFile(f"{source}: length {len(payload)} bytes, header implies {expected} "
                            f"({n_frames} frames x {count} Gaussians)")
    packed = np.frombuffer(payload, dtype="<f4", offset=DEFORMATION_HEADER.size).reshape(n_frames, count, 10)
    packed = packed.astype(np.float64)
    return DeformationField(n_frames, "tabulated", delta_mu=packed[:, :, 0:3],
                            delta_q=packed[:, :, 3:7], delta_s=packed[:, :, 7:10])


def load_deformation(path) -> DeformationField:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Deformation file not found: {path}")
    return deformation_from_bytes(path.read_bytes(), source=str(path))


def save_deformation(deformation: DeformationField, path, cloud: GaussianCloud = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(deformation_to_bytes(deformation, cloud))
    return path
