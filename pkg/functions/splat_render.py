#!/usr/bin/env python3
"""
CPU splat rasterizer.

Gaussians are projected to 2D ellipses, globally depth-sorted and alpha
blended front to back. Blending is recorded once as a sparse matrix of
per-pixel contributor weights (alpha_i * T_i), so color, alpha, flow and
uncertainty maps are all linear reads of the same weights:

    color       = clip(B @ sh_colors, 0, 1)
    alpha_acc   = B @ 1
    flow        = B_t @ (Proj(mu_t) - Proj(mu_1))
    uncertainty = B_t @ xi

The same matrix gives the exact SH gradient of masked image losses, since a
render is linear in the SH coefficients once geometry is fixed.
"""

import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
from PIL import Image
from scipy import ndimage, sparse

from functions.errors import DimensionMismatch, MalformedFile, SizeMismatch
from functions.scene_model import Camera, GaussianCloud
from functions.spherical_harmonics import COLOR_OFFSET, sh_basis
from functions.ssim import weighted_ssim

logger = logging.getLogger(__name__)

LOW_PASS = 0.3
ALPHA_MAX = 0.99
FOOTPRINT_SIGMAS = 3.0
MIN_TRANSMITTANCE = 1e-4
WARP_ALPHA_THRESHOLD = 0.01

IMAGE_MAGIC = b"G4DI"
IMAGE_VERSION = 1
IMAGE_HEADER = struct.Struct("<4sIIII")


@dataclass(frozen=True)
class Splat2D:
    center_px: np.ndarray
    cov2d: np.ndarray
    depth: float
    gaussian_index: int


@dataclass
class ProjectedSplats:
    """Array form of the in-frustum splats, in Gaussian index order."""
    index: np.ndarray
    center: np.ndarray
    cov2d: np.ndarray
    depth: np.ndarray
    radius: np.ndarray

    def __len__(self) -> int:
        return self.index.shape[0]


@dataclass
class RenderedMaps:
    color: np.ndarray
    alpha_acc: np.ndarray
    flow: Optional[np.ndarray] = None
    uncertainty: Optional[np.ndarray] = None
    per_pixel_contributors: Optional[sparse.csr_matrix] = None
    raw_color: Optional[np.ndarray] = None
    basis: Optional[np.ndarray] = None

    @property
    def height(self) -> int:
        return self.alpha_acc.shape[0]

    @property
    def width(self) -> int:
        return self.alpha_acc.shape[1]


def _camera_jacobians(camera: Camera, cam_points: np.ndarray) -> np.ndarray:
    n = cam_points.shape[0]
    jac = np.zeros((n, 2, 3))
    if camera.model == "pinhole":
        x, y, z = cam_points[:, 0], cam_points[:, 1], cam_points[:, 2]
        jac[:, 0, 0] = camera.fx / z
        jac[:, 0, 2] = -camera.fx * x / (z * z)
        jac[:, 1, 1] = camera.fy / z
        jac[:, 1, 2] = -camera.fy * y / (z * z)
    else:
        jac[:, 0, 0] = camera.fx
        jac[:, 1, 1] = camera.fy
    return jac


def project_arrays(cloud: GaussianCloud, camera: Camera) -> ProjectedSplats:
    if len(cloud) == 0:
        return ProjectedSplats(np.zeros(0, dtype=np.int64), np.zeros((0, 2)), np.zeros((0, 2, 2)),
                               np.zeros(0), np.zeros(0))
    cam_points = camera.to_camera(cloud.mu)
    depth = cam_points[:, 2]
    in_depth = (depth > camera.near) & (depth < camera.far)
    index = np.flatnonzero(in_depth)
    cam_points = cam_points[index]

    centers, _ = camera.project_points(cloud.mu[index])
    cov_world = cloud.covariances()[index]
    cov_cam = camera.rotation @ cov_world @ camera.rotation.T
    jac = _camera_jacobians(camera, cam_points)
    cov2d = jac @ cov_cam @ np.swapaxes(jac, 1, 2)
    cov2d = 0.5 * (cov2d + np.swapaxes(cov2d, 1, 2)) + LOW_PASS * np.eye(2)

    largest = np.linalg.eigvalsh(cov2d)[:, -1]
    radius = FOOTPRINT_SIGMAS * np.sqrt(largest)
    on_image = ((centers[:, 0] + radius >= 0) & (centers[:, 0] - radius <= camera.width - 1)
                & (centers[:, 1] + radius >= 0) & (centers[:, 1] - radius <= camera.height - 1))
    keep = np.flatnonzero(on_image)
    return ProjectedSplats(index[keep], centers[keep], cov2d[keep], depth[index][keep], radius[keep])


def project(cloud: GaussianCloud, camera: Camera) -> List[Splat2D]:
    splats = project_arrays(cloud, camera)
    return [Splat2D(splats.center[i], splats.cov2d[i], float(splats.depth[i]), int(splats.index[i]))
            for i in range(len(splats))]


def blend_weights(cloud: GaussianCloud, camera: Camera) -> sparse.csr_matrix:
    """Front-to-back alpha blending recorded as a (H*W, N) matrix of alpha_i * T_i."""
    height, width = camera.height, camera.width
    splats = project_arrays(cloud, camera)
    transmittance = np.ones(height * width)
    rows, cols, vals = [], [], []

    order = np.argsort(splats.depth, kind="stable")
    inverses = np.linalg.inv(splats.cov2d) if len(splats) else np.zeros((0, 2, 2))
    for i in order:
        cx, cy = splats.center[i]
        r = splats.radius[i]
        x0, x1 = max(int(np.ceil(cx - r)), 0), min(int(np.floor(cx + r)), width - 1)
        y0, y1 = max(int(np.ceil(cy - r)), 0), min(int(np.floor(cy + r)), height - 1)
        if x0 > x1 or y0 > y1:
            continue
        xs, ys = np.meshgrid(np.arange(x0, x1 + 1), np.arange(y0, y1 + 1))
        dx = xs.ravel() - cx
        dy = ys.ravel() - cy
        inv = inverses[i]
        mahalanobis = inv[0, 0] * dx * dx + 2.0 * inv[0, 1] * dx * dy + inv[1, 1] * dy * dy
        pixels = ys.ravel() * width + xs.ravel()
        inside = mahalanobis <= FOOTPRINT_SIGMAS ** 2
        inside &= transmittance[pixels] >= MIN_TRANSMITTANCE
        if not np.any(inside):
            continue
        pixels = pixels[inside]
        alpha = np.minimum(ALPHA_MAX, cloud.sigma[splats.index[i]] * np.exp(-0.5 * mahalanobis[inside]))
        weight = alpha * transmittance[pixels]
        transmittance[pixels] *= 1.0 - alpha
        nonzero = weight > 0
        rows.append(pixels[nonzero])
        cols.append(np.full(int(nonzero.sum()), splats.index[i], dtype=np.int64))
        vals.append(weight[nonzero])

    if rows:
        rows, cols, vals = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    else:
        rows, cols, vals = np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros(0)
    return sparse.csr_matrix((vals, (rows, cols)), shape=(height * width, len(cloud)))


def view_basis(cloud: GaussianCloud, camera: Camera) -> np.ndarray:
    """SH basis (N, K) for each Gaussian's view direction from `camera`."""
    return sh_basis(cloud.sh_degree, camera.view_directions(cloud.mu))


def colors_from_basis(sh: np.ndarray, basis: np.ndarray) -> np.ndarray:
    return np.einsum("nck,nk->nc", sh, basis) + COLOR_OFFSET


def _to_image(weights: sparse.csr_matrix, values: np.ndarray, camera: Camera) -> np.ndarray:
    image = weights @ values
    if values.ndim == 1:
        return np.asarray(image).reshape(camera.height, camera.width)
    return np.asarray(image).reshape(camera.height, camera.width, values.shape[1])


def render_color(cloud: GaussianCloud, camera: Camera,
                 weights: sparse.csr_matrix = None) -> RenderedMaps:
    if weights is None:
        weights = blend_weights(cloud, camera)
    basis = view_basis(cloud, camera)
    raw = _to_image(weights, colors_from_basis(cloud.sh, basis), camera)
    alpha = np.clip(_to_image(weights, np.ones(len(cloud)), camera), 0.0, 1.0)
    return RenderedMaps(color=np.clip(raw, 0.0, 1.0), alpha_acc=alpha, per_pixel_contributors=weights,
                        raw_color=raw, basis=basis)


def _frame_t_cloud(cloud_1: GaussianCloud, cloud_t: Union[GaussianCloud, np.ndarray]) -> GaussianCloud:
    if isinstance(cloud_t, GaussianCloud):
        if len(cloud_t) != len(cloud_1):
            raise SizeMismatch(f"frame-1 cloud has {len(cloud_1)} Gaussians, frame-t cloud {len(cloud_t)}")
        return cloud_t
    positions = np.asarray(cloud_t, dtype=np.float64)
    if positions.shape != (len(cloud_1), 3):
        raise SizeMismatch(f"expected {len(cloud_1)}x3 positions, got {positions.shape}")
    return cloud_1.replace(mu=positions)


def render_flow(cloud_1: GaussianCloud, cloud_t: Union[GaussianCloud, np.ndarray], camera: Camera,
                weights_t: sparse.csr_matrix = None) -> RenderedMaps:
    """Flow from frame 1 to frame t, blended with the frame-t splat weights."""
    cloud_t = _frame_t_cloud(cloud_1, cloud_t)
    if weights_t is None:
        weights_t = blend_weights(cloud_t, camera)
    uv_1, _ = camera.project_points(cloud_1.mu)
    uv_t, _ = camera.project_points(cloud_t.mu)
    displacement = uv_t - uv_1
    displacement[~np.isfinite(displacement)] = 0.0
    flow = _to_image(weights_t, displacement, camera)
    alpha = np.clip(_to_image(weights_t, np.ones(len(cloud_t)), camera), 0.0, 1.0)
    return RenderedMaps(color=np.zeros((camera.height, camera.width, 3)), alpha_acc=alpha, flow=flow,
                        per_pixel_contributors=weights_t)


def render_uncertainty(xi: np.ndarray, cloud_t: GaussianCloud, camera: Camera,
                       weights_t: sparse.csr_matrix = None) -> RenderedMaps:
    xi = np.asarray(xi, dtype=np.float64)
    if xi.shape != (len(cloud_t),):
        raise SizeMismatch(f"expected {len(cloud_t)} uncertainty values, got {xi.shape}")
    if weights_t is None:
        weights_t = blend_weights(cloud_t, camera)
    uncertainty = _to_image(weights_t, xi, camera)
    alpha = np.clip(_to_image(weights_t, np.ones(len(cloud_t)), camera), 0.0, 1.0)
    return RenderedMaps(color=np.zeros((camera.height, camera.width, 3)), alpha_acc=alpha,
                        uncertainty=uncertainty, per_pixel_contributors=weights_t)


def warp_frame1(render1: np.ndarray, flow_t: np.ndarray, alpha_t: np.ndarray) -> np.ndarray:
    """Backward bilinear warp: warp(x) = render1(x - flow(x)) on covered pixels, border clamped."""
    render1 = np.asarray(render1, dtype=np.float64)
    flow_t = np.asarray(flow_t, dtype=np.float64)
    alpha_t = np.asarray(alpha_t, dtype=np.float64)
    height, width = render1.shape[:2]
    if flow_t.shape != (height, width, 2) or alpha_t.shape != (height, width):
        raise DimensionMismatch(f"render {render1.shape}, flow {flow_t.shape}, alpha {alpha_t.shape}")

    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    sample_y = np.clip(ys - flow_t[..., 1], 0, height - 1)
    sample_x = np.clip(xs - flow_t[..., 0], 0, width - 1)
    channels = render1 if render1.ndim == 3 else render1[..., None]
    warped = np.stack([
        ndimage.map_coordinates(channels[..., c], [sample_y, sample_x], order=1, mode="nearest")
        for c in range(channels.shape[2])
    ], axis=-1)
    still = np.all(flow_t == 0, axis=-1) | (alpha_t <= WARP_ALPHA_THRESHOLD)
    warped = np.where(still[..., None], channels, warped)
    return warped if render1.ndim == 3 else warped[..., 0]


def image_loss_and_gradient(raw: np.ndarray, target: np.ndarray, mask: np.ndarray,
                            eta: float) -> Tuple[float, np.ndarray]:
    """(1-eta)*L1 + eta*(1-SSIM) over masked pixels, with d loss / d raw.

    Both terms are normalized by the masked pixel count; SSIM is evaluated on
    the masked images. The clamp to [0,1] sits between raw and the loss.
    """
    mask = np.asarray(mask, dtype=bool)
    if raw.shape != target.shape or raw.shape[:2] != mask.shape:
        raise DimensionMismatch(f"render {raw.shape}, target {target.shape}, mask {mask.shape}")
    count = int(mask.sum())
    if count == 0:
        return 0.0, np.zeros_like(raw)

    rendered = np.clip(raw, 0.0, 1.0)
    channels = rendered.shape[2]
    weight = mask[..., None] / float(count * channels)
    residual = rendered - target
    l1 = float(np.sum(weight * np.abs(residual)))
    grad = (1.0 - eta) * weight * np.sign(residual)
    loss = (1.0 - eta) * l1

    if eta > 0:
        m = mask[..., None].astype(np.float64)
        value, grad_ssim = weighted_ssim(m * rendered, m * target, np.broadcast_to(weight, rendered.shape))
        loss += eta * (1.0 - value)
        grad = grad - eta * m * grad_ssim

    grad = np.where((raw >= 0.0) & (raw <= 1.0), grad, 0.0)
    return float(loss), grad


def sh_gradient(weights: sparse.csr_matrix, image_grad: np.ndarray, basis: np.ndarray) -> np.ndarray:
    """Pull an image-space gradient back to per-Gaussian SH coefficients (N,3,K)."""
    channels = image_grad.shape[2]
    color_grad = np.asarray(weights.T @ image_grad.reshape(-1, channels))
    return color_grad[:, :, None] * basis[:, None, :]


def masked_loss_and_sh_gradient(cloud: GaussianCloud, camera: Camera, target: np.ndarray,
                                mask: np.ndarray, eta: float,
                                maps: RenderedMaps = None) -> Tuple[float, np.ndarray]:
    if maps is None or maps.per_pixel_contributors is None or maps.basis is None:
        maps = render_color(cloud, camera, weights=None if maps is None else maps.per_pixel_contributors)
    target = np.asarray(target, dtype=np.float64)
    if target.shape != (camera.height, camera.width, 3):
        raise DimensionMismatch(f"target {target.shape} does not match camera {camera.height}x{camera.width}")
    raw = _to_image(maps.per_pixel_contributors, colors_from_basis(cloud.sh, maps.basis), camera)
    loss, image_grad = image_loss_and_gradient(raw, target, mask, eta)
    if loss == 0.0 and not np.any(image_grad):
        return loss, np.zeros_like(cloud.sh)
    return loss, sh_gradient(maps.per_pixel_contributors, image_grad, maps.basis)


# ---------------------------------------------------------------------------
# Image files
# ---------------------------------------------------------------------------

def save_png(image: np.ndarray, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pixels = np.round(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)
    mode = "RGB" if pixels.ndim == 3 else "L"
    Image.fromarray(pixels, mode=mode).save(path, format="PNG")
    return path


def float_image_to_bytes(image: np.ndarray) -> bytes:
    image = np.asarray(image)
    data = image if image.ndim == 3 else image[..., None]
    header = IMAGE_HEADER.pack(IMAGE_MAGIC, IMAGE_VERSION, data.shape[0], data.shape[1], data.shape[2])
    return header + data.astype("<f4").tobytes()


def save_float_image(image: np.ndarray, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(float_image_to_bytes(image))
    return path


def load_float_image(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Image file not found: {path}")
    payload = path.read_bytes()
    if len(payload) < IMAGE_HEADER.size:
        raise MalformedFile(f"{path}: truncated header")
    magic, version, height, width, channels = IMAGE_HEADER.unpack_from(payload)
    if magic != IMAGE_MAGIC or version != IMAGE_VERSION:
        raise MalformedFile(f"{path}: not a version-{IMAGE_VERSION} float image")
    expected = IMAGE_HEADER.size + height * width * channels * 4
    if len(payload) != expected:
        raise MalformedFile(f"{path}: length {len(payload)} bytes, header implies {expected}")
    data = np.frombuffer(payload, dtype="<f4", offset=IMAGE_HEADER.size).reshape(height, width, channels)
    return data.astype(np.float64) if channels > 1 else data[..., 0].astype(np.float64)
