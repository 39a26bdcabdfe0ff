#!/usr/bin/env python3
"""
Color-uncertainty-guided appearance refinement.

Propagated Gaussians keep their frame-1 SH coefficients, but once they move
their view-dependent color drifts and hidden Gaussians get exposed. For every
scheduled (frame, view) pair the refiner:

  - warps the frame-1 render to frame t with the rendered optical flow
    (rescaled to frame-t coverage),
  - scores each Gaussian's color change between frame 1 and frame t
    (xi = 1 - exp(-|SH(v_t) - SH(v_1)|_1)), splats it into an uncertainty
    map U, and thresholds U against epsilon * mean(U) on covered pixels,
  - fits the masked pixels to the warped target (L1 + SSIM) while holding the
    rest near the pre-refinement render (L1).

Only the shared SH coefficients change; positions, rotations, scales and
opacities are never touched.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy import sparse

from functions.config import RefineConfig
from functions.errors import InvariantViolation, NonFiniteLoss, SizeMismatch
from functions.scene_model import Camera, GaussianCloud
from functions.splat_render import (
    WARP_ALPHA_THRESHOLD,
    RenderedMaps,
    blend_weights,
    colors_from_basis,
    image_loss_and_gradient,
    render_color,
    render_flow,
    sh_gradient,
    view_basis,
    warp_frame1,
)
from functions.spherical_harmonics import sh_to_color

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ["step", "t", "v", "L_fore", "L_back", "L_refine"]


def color_uncertainty(cloud_1: GaussianCloud, cloud_t: GaussianCloud, camera: Camera) -> np.ndarray:
    if len(cloud_1) != len(cloud_t):
        raise SizeMismatch(f"frame-1 cloud has {len(cloud_1)} Gaussians, frame-t cloud {len(cloud_t)}")
    c1 = sh_to_color(cloud_1.sh, camera.view_directions(cloud_1.mu))
    ct = sh_to_color(cloud_t.sh, camera.view_directions(cloud_t.mu))
    return 1.0 - np.exp(-np.sum(np.abs(ct - c1), axis=1))


def artifact_mask(uncertainty: np.ndarray, alpha_acc: np.ndarray, epsilon: float) -> np.ndarray:
    """U > epsilon * mean(U over covered pixels); empty when nothing is covered."""
    uncertainty = np.asarray(uncertainty, dtype=np.float64)
    covered = np.asarray(alpha_acc) > WARP_ALPHA_THRESHOLD
    if not np.any(covered):
        return np.zeros(uncertainty.shape, dtype=bool)
    return uncertainty > epsilon * float(uncertainty[covered].mean())


@dataclass
class PairState:
    """Frozen-geometry quantities of one (frame, view) pair."""
    t: int
    v: int
    camera: Camera
    weights: sparse.csr_matrix
    basis_t: np.ndarray
    basis_1: np.ndarray
    alpha: np.ndarray
    flow: np.ndarray
    target: np.ndarray
    original: np.ndarray

    def raw_render(self, sh: np.ndarray) -> np.ndarray:
        colors = colors_from_basis(sh, self.basis_t)
        return np.asarray(self.weights @ colors).reshape(self.camera.height, self.camera.width, 3)

    def uncertainty(self, sh: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        diff = np.einsum("nck,nk->nc", sh, self.basis_t - self.basis_1)
        xi = 1.0 - np.exp(-np.sum(np.abs(diff), axis=1))
        image = np.asarray(self.weights @ xi).reshape(self.camera.height, self.camera.width)
        return xi, image


@dataclass
class RefineResult:
    clouds: List[GaussianCloud]
    trace: pd.DataFrame
    notices: List[str] = field(default_factory=list)
    steps: int = 0
    pairs: List[Tuple[int, int]] = field(default_factory=list)
    maps: Dict[Tuple[int, int], Dict[str, np.ndarray]] = field(default_factory=dict)

    def loss_by_step(self) -> pd.DataFrame:
        if self.trace.empty:
            return self.trace
        return self.trace.groupby("step")[["L_fore", "L_back", "L_refine"]].mean().reset_index()

    def summary(self) -> Dict:
        by_step = self.loss_by_step()
        if by_step.empty:
            return {"steps": self.steps, "pairs": len(self.pairs), "notices": list(self.notices)}
        return {
            "steps": self.steps,
            "pairs": len(self.pairs),
            "initial_L_fore": float(by_step["L_fore"].iloc[0]),
            "final_L_fore": float(by_step["L_fore"].iloc[-1]),
            "initial_L_refine": float(by_step["L_refine"].iloc[0]),
            "final_L_refine": float(by_step["L_refine"].iloc[-1]),
            "notices": list(self.notices),
        }


def schedule_pairs(n_frames: int, n_views: int, max_pairs: int) -> List[Tuple[int, int]]:
    """All views for frames 2..T, frames thinned with a uniform stride to fit max_pairs."""
    frames = list(range(2, n_frames + 1))
    if not frames or n_views == 0:
        return []
    frames_per_epoch = max(1, max_pairs // n_views)
    stride = int(np.ceil(len(frames) / frames_per_epoch))
    pairs = [(t, v) for t in frames[::stride] for v in range(n_views)]
    return pairs[:max_pairs]


def warp_target(render_1: RenderedMaps, flow_maps: RenderedMaps) -> np.ndarray:
    """Frame-1 render carried to frame t at frame-t coverage.

    The rendered flow is alpha-blended, so it is divided by coverage before
    sampling. Where the sample moved, the frame-1 color is un-premultiplied by
    the frame-1 coverage at the sample and re-multiplied by the frame-t coverage.
    Zero flow returns the frame-1 render unchanged.
    """
    alpha_t = flow_maps.alpha_acc
    covered = alpha_t > WARP_ALPHA_THRESHOLD
    flow = np.where(covered[..., None],
                    flow_maps.flow / np.maximum(alpha_t, WARP_ALPHA_THRESHOLD)[..., None], 0.0)
    warped = warp_frame1(render_1.color, flow, alpha_t)
    coverage_1 = warp_frame1(render_1.alpha_acc, flow, alpha_t)
    moved = covered & np.any(flow != 0.0, axis=-1) & (coverage_1 > WARP_ALPHA_THRESHOLD)
    scale = np.where(moved, alpha_t / np.maximum(coverage_1, WARP_ALPHA_THRESHOLD), 1.0)
    return np.clip(warped * scale[..., None], 0.0, 1.0)


def _prepare_pair(sequence: List[GaussianCloud], cameras: List[Camera], renders_1: List[RenderedMaps],
                  t: int, v: int) -> PairState:
    cloud_1, cloud_t, camera = sequence[0], sequence[t - 1], cameras[v]
    weights = blend_weights(cloud_t, camera)
    flow_maps = render_flow(cloud_1, cloud_t, camera, weights_t=weights)
    target = warp_target(renders_1[v], flow_maps)
    basis_t = view_basis(cloud_t, camera)
    state = PairState(t=t, v=v, camera=camera, weights=weights, basis_t=basis_t,
                      basis_1=view_basis(cloud_1, camera), alpha=flow_maps.alpha_acc,
                      flow=flow_maps.flow, target=target, original=None)
    state.original = np.clip(state.raw_render(cloud_t.sh), 0.0, 1.0)
    return state


def prepare_pairs(sequence: List[GaussianCloud], cameras: List[Camera], pairs: List[Tuple[int, int]],
                  threads: int = 1) -> List[PairState]:
    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        renders_1 = list(executor.map(lambda cam: render_color(sequence[0], cam), cameras))
        return list(executor.map(lambda pair: _prepare_pair(sequence, cameras, renders_1, *pair), pairs))


def evaluate_pair(state: PairState, sh: np.ndarray, config: RefineConfig
                  ) -> Tuple[float, float, float, np.ndarray, np.ndarray]:
    """(L_fore, L_back, L_refine, SH gradient, mask) for the current coefficients."""
    raw = state.raw_render(sh)
    _, uncertainty = state.uncertainty(sh)
    mask = artifact_mask(uncertainty, state.alpha, config.epsilon)
    fore, grad_fore = image_loss_and_gradient(raw, state.target, mask, config.eta)
    back, grad_back = image_loss_and_gradient(raw, state.original, ~mask, 0.0)
    zeta = config.zeta
    total = (1.0 - zeta) * fore + zeta * back
    grad = sh_gradient(state.weights, (1.0 - zeta) * grad_fore + zeta * grad_back, state.basis_t)
    return fore, back, total, grad, mask


def refine(sequence: List[GaussianCloud], cameras: List[Camera], config: RefineConfig,
           trainable: Optional[np.ndarray] = None, threads: int = 1, keep_maps: bool = False) -> RefineResult:
    """Gradient descent with momentum on the shared SH coefficients of the sequence.

    Each step sums the SH gradients of every scheduled (frame, view) pair.
    """
    empty_trace = pd.DataFrame(columns=TRACE_COLUMNS)
    if not sequence:
        return RefineResult(clouds=[], trace=empty_trace, notices=["empty sequence"])
    n = len(sequence[0])
    for cloud in sequence:
        if len(cloud) != n:
            raise SizeMismatch(f"frame {cloud.frame} has {len(cloud)} Gaussians, frame 1 has {n}")
        if not np.array_equal(cloud.sh, sequence[0].sh):
            raise InvariantViolation(f"frame {cloud.frame} SH coefficients differ from frame 1")

    pairs = schedule_pairs(len(sequence), len(cameras), config.max_pairs_per_epoch)
    if not pairs or config.iterations == 0 or n == 0:
        notice = "nothing to refine (single frame, no cameras or zero iterations)"
        logger.info(notice)
        return RefineResult(clouds=list(sequence), trace=empty_trace, notices=[notice], pairs=pairs)

    logger.info(f"Refining {n} Gaussians over {len(pairs)} (frame, view) pairs for {config.iterations} steps")
    states = prepare_pairs(sequence, cameras, pairs, threads)
    sh = np.array(sequence[0].sh, copy=True)

    maps = {}
    any_mask = False
    for state in states:
        _, uncertainty = state.uncertainty(sh)
        mask = artifact_mask(uncertainty, state.alpha, config.epsilon)
        any_mask |= bool(mask.any())
        if keep_maps:
            maps[(state.t, state.v)] = {"uncertainty": uncertainty, "mask": mask.astype(np.float64),
                                        "flow": state.flow}
    if not any_mask:
        notice = "artifact masks are empty for every (frame, view) pair; SH left unchanged"
        logger.info(notice)
        return RefineResult(clouds=list(sequence), trace=empty_trace, notices=[notice], pairs=pairs, maps=maps)

    update_rows = np.ones(n, dtype=bool) if trainable is None else np.asarray(trainable, dtype=bool)
    if update_rows.shape != (n,):
        raise SizeMismatch(f"trainable mask has shape {update_rows.shape}, expected ({n},)")

    velocity = np.zeros_like(sh)
    rows = []
    for step in range(config.iterations + 1):
        grad = np.zeros_like(sh)
        for state in states:
            fore, back, total, pair_grad, _ = evaluate_pair(state, sh, config)
            if not (np.isfinite(total) and np.all(np.isfinite(pair_grad))):
                raise NonFiniteLoss(f"non-finite refinement loss at step {step}, frame {state.t}, view {state.v}",
                                    diagnostics={"step": step, "t": state.t, "v": state.v, "L_fore": fore,
                                                 "L_back": back, "L_refine": total,
                                                 "max_abs_sh": float(np.nanmax(np.abs(sh)))})
            rows.append((step, state.t, state.v, fore, back, total))
            grad += pair_grad
        if step == config.iterations:
            break
        velocity = config.momentum * velocity + grad
        sh[update_rows] -= config.step_size * velocity[update_rows]
        if step % 50 == 0:
            logger.debug(f"step {step}: mean L_refine {np.mean([r[5] for r in rows[-len(states):]]):.6f}")

    trace = pd.DataFrame(rows, columns=TRACE_COLUMNS)
    result = RefineResult(clouds=[cloud.replace(sh=sh) for cloud in sequence], trace=trace,
                          steps=config.iterations, pairs=pairs, maps=maps)
    summary = result.summary()
    logger.info(f"L_fore {summary['initial_L_fore']:.6f} -> {summary['final_L_fore']:.6f}, "
                f"L_refine {summary['initial_L_refine']:.6f} -> {summary['final_L_refine']:.6f}")
    return result


def edited_gaussians(source: GaussianCloud, edited: GaussianCloud, atol: float = 0.0) -> np.ndarray:
    """Mask of edited Gaussians that differ from the source (or were appended past it)."""
    n_src, n_edit = len(source), len(edited)
    changed = np.ones(n_edit, dtype=bool)
    common = min(n_src, n_edit)
    if common:
        same = (np.all(np.isclose(source.mu[:common], edited.mu[:common], rtol=0, atol=atol), axis=1)
                & np.all(np.isclose(source.q[:common], edited.q[:common], rtol=0, atol=atol), axis=1)
                & np.all(np.isclose(source.s[:common], edited.s[:common], rtol=0, atol=atol), axis=1)
                & np.isclose(source.sigma[:common], edited.sigma[:common], rtol=0, atol=atol)
                & np.all(np.isclose(source.sh[:common], edited.sh[:common], rtol=0, atol=atol), axis=(1, 2)))
        changed[:common] = ~same
    return changed
