#!/usr/bin/env python3
"""
Motion transfer from the source cloud to the edited cloud.

Each edited Gaussian looks up its anchors, follows the anchor correspondence
to source anchors, and collects the source Gaussians behind those anchors.
Their per-frame deltas are averaged with weights

    w = sigma' * exp(-1/2 (mu - mu')^T Sigma'^-1 (mu - mu'))

using frame-1 source covariances, so the table is built once for all frames.
Positions average linearly, quaternion deltas average after sign alignment
with the dominant contributor, and scale ratios average geometrically.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from functions.anchor_extract import AnchorSet
from functions.errors import SizeMismatch
from functions.scene_model import DeformationField, GaussianCloud, quat_normalize, source_delta
from functions.uot_match import CorrespondenceMap

logger = logging.getLogger(__name__)

WEIGHT_FLOOR = 1e-12
NDD_DISTANCE_FLOOR = 1e-9


@dataclass
class InfluenceTable:
    """weights[g, g'] is the influence of source Gaussian g' on edited Gaussian g."""
    weights: sparse.csr_matrix
    fallback: np.ndarray
    nearest_source: np.ndarray
    mode: str = "anchor"

    @property
    def n_fallback(self) -> int:
        return int(self.fallback.sum())

    def source_sets(self) -> List[np.ndarray]:
        return [self.weights.indices[self.weights.indptr[g]:self.weights.indptr[g + 1]]
                for g in range(self.weights.shape[0])]


def mahalanobis_weights(edited_mu: np.ndarray, source: GaussianCloud, rows: np.ndarray,
                        cols: np.ndarray) -> np.ndarray:
    diff = edited_mu[rows] - source.mu[cols]
    rotations = source.rotations()[cols]
    local = np.einsum("pji,pj->pi", rotations, diff) / source.s[cols]
    return source.sigma[cols] * np.exp(-0.5 * np.sum(local * local, axis=1))


def _nearest_sources(edited: GaussianCloud, source: GaussianCloud) -> np.ndarray:
    if len(source) == 0:
        raise SizeMismatch("source cloud is empty")
    _, nearest = cKDTree(source.mu).query(edited.mu)
    return np.atleast_1d(nearest).astype(np.int64)


def build_influence(edited: GaussianCloud, source: GaussianCloud, anchors_src: AnchorSet,
                    anchors_edit: AnchorSet, corr: CorrespondenceMap) -> InfluenceTable:
    if len(anchors_edit.gaussian_to_anchors) != len(edited):
        raise SizeMismatch(f"edit anchors cover {len(anchors_edit.gaussian_to_anchors)} Gaussians, "
                           f"edited cloud has {len(edited)}")
    if len(corr) != len(anchors_edit):
        raise SizeMismatch(f"correspondence has {len(corr)} entries for {len(anchors_edit)} edit anchors")

    sources_of_edit_anchor = [np.asarray(anchors_src.membership[int(i)], dtype=np.int64) for i in corr.corr]
    rows, cols = [], []
    for g, edit_anchors in enumerate(anchors_edit.gaussian_to_anchors):
        members = np.unique(np.concatenate([sources_of_edit_anchor[a] for a in edit_anchors]))
        rows.append(np.full(members.shape[0], g, dtype=np.int64))
        cols.append(members)
    rows = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
    cols = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)

    values = mahalanobis_weights(edited.mu, source, rows, cols)
    weights = sparse.csr_matrix((values, (rows, cols)), shape=(len(edited), len(source)))
    totals = np.asarray(weights.sum(axis=1)).ravel()
    fallback = totals <= WEIGHT_FLOOR
    if np.any(fallback):
        logger.warning(f"{int(fallback.sum())} edited Gaussians have degenerate influence weights; "
                       f"using their nearest source Gaussian")
    return InfluenceTable(weights=weights, fallback=fallback, nearest_source=_nearest_sources(edited, source))


def build_nearest_influence(edited: GaussianCloud, source: GaussianCloud) -> InfluenceTable:
    """Ablation: each edited Gaussian copies the motion of its nearest source Gaussian."""
    nearest = _nearest_sources(edited, source)
    n = len(edited)
    weights = sparse.csr_matrix((np.ones(n), (np.arange(n), nearest)), shape=(n, len(source)))
    return InfluenceTable(weights=weights, fallback=np.zeros(n, dtype=bool), nearest_source=nearest,
                          mode="nearest")


def aggregate_deformation(influence: InfluenceTable, delta_mu: np.ndarray, delta_q: np.ndarray,
                          scale_ratio: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Weighted per-edited-Gaussian (delta_mu, delta_q, scale_ratio) from source deltas."""
    W = influence.weights
    if delta_mu.shape[0] != W.shape[1]:
        raise SizeMismatch(f"deltas for {delta_mu.shape[0]} source Gaussians, table expects {W.shape[1]}")
    totals = np.asarray(W.sum(axis=1)).ravel()
    safe = np.where(influence.fallback, 1.0, totals)

    mu = (W @ delta_mu) / safe[:, None]

    dominant = np.asarray(W.argmax(axis=1)).ravel()
    row_of_entry = np.repeat(np.arange(W.shape[0]), np.diff(W.indptr))
    dots = np.sum(delta_q[W.indices] * delta_q[dominant[row_of_entry]], axis=1)
    signed = sparse.csr_matrix((W.data * np.where(dots < 0, -1.0, 1.0), W.indices, W.indptr), shape=W.shape)
    q = (signed @ delta_q) / safe[:, None]

    ratio = np.exp((W @ np.log(scale_ratio)) / safe[:, None])

    if np.any(influence.fallback):
        rows = np.flatnonzero(influence.fallback)
        nearest = influence.nearest_source[rows]
        mu[rows] = delta_mu[nearest]
        q[rows] = delta_q[nearest]
        ratio[rows] = scale_ratio[nearest]
    return mu, q, ratio


def apply_deltas(edited: GaussianCloud, delta_mu: np.ndarray, delta_q: np.ndarray,
                 scale_ratio: np.ndarray, t: int) -> GaussianCloud:
    return edited.replace(mu=edited.mu + delta_mu, q=quat_normalize(edited.q + delta_q),
                          s=edited.s * scale_ratio, frame=t)


def propagate_sequence(edited: GaussianCloud, source: GaussianCloud, deformation: DeformationField,
                       influence: InfluenceTable) -> List[GaussianCloud]:
    """Edited cloud at t = 1..T. Frame 1 is returned unchanged; sigma and sh never change."""
    if influence.weights.shape != (len(edited), len(source)):
        raise SizeMismatch(f"influence table {influence.weights.shape} does not match "
                           f"{len(edited)} edited x {len(source)} source Gaussians")
    sequence = [edited]
    for t in range(2, deformation.n_frames + 1):
        delta_mu, delta_q, ratio = source_delta(source, deformation, t)
        sequence.append(apply_deltas(edited, *aggregate_deformation(influence, delta_mu, delta_q, ratio), t))
    return sequence


def neighborhood_distance_deviation(anchors_1: np.ndarray, anchors_t: np.ndarray, k_nn: int = 5) -> float:
    """Mean relative change of distances between each anchor and its k_nn frame-1 neighbors."""
    anchors_1 = np.asarray(anchors_1, dtype=np.float64).reshape(-1, 3)
    anchors_t = np.asarray(anchors_t, dtype=np.float64).reshape(-1, 3)
    if anchors_1.shape != anchors_t.shape:
        raise SizeMismatch(f"anchor lists differ: {anchors_1.shape} vs {anchors_t.shape}")
    m = anchors_1.shape[0]
    if m < 2:
        return 0.0
    neighbors = min(k_nn, m - 1)
    _, idx = cKDTree(anchors_1).query(anchors_1, k=neighbors + 1)
    idx = idx.reshape(m, neighbors + 1)
    # drop self; with duplicate anchors self may not be in column 0
    pairs_a, pairs_b = [], []
    for a in range(m):
        others = [b for b in idx[a] if b != a][:neighbors]
        pairs_a.extend([a] * len(others))
        pairs_b.extend(others)
    pairs_a, pairs_b = np.asarray(pairs_a), np.asarray(pairs_b)
    d1 = np.linalg.norm(anchors_1[pairs_a] - anchors_1[pairs_b], axis=1)
    dt = np.linalg.norm(anchors_t[pairs_a] - anchors_t[pairs_b], axis=1)
    return float(np.mean(np.abs(dt - d1) / np.maximum(d1, NDD_DISTANCE_FLOOR)))


def ndd_per_frame(anchors: AnchorSet, sequence: List[GaussianCloud], k_nn: int = 5) -> Dict[int, float]:
    reference = anchors.positions_at(sequence[0].mu)
    return {cloud.frame: neighborhood_distance_deviation(reference, anchors.positions_at(cloud.mu), k_nn)
            for cloud in sequence}


def influence_summary(influence: InfluenceTable) -> Dict:
    sizes = np.diff(influence.weights.indptr)
    return {
        "mode": influence.mode,
        "fallback_gaussians": influence.n_fallback,
        "mean_sources": float(sizes.mean()) if sizes.size else 0.0,
        "max_sources": int(sizes.max()) if sizes.size else 0,
    }


def propagate_with_guidance(edited: GaussianCloud, source: GaussianCloud, deformation: DeformationField,
                            guidance: str, anchors_src: Optional[AnchorSet] = None,
                            anchors_edit: Optional[AnchorSet] = None,
                            corr: Optional[CorrespondenceMap] = None) -> Tuple[List[GaussianCloud], InfluenceTable]:
    if guidance == "nearest":
        influence = build_nearest_influence(edited, source)
    else:
        influence = build_influence(edited, source, anchors_src, anchors_edit, corr)
    return propagate_sequence(edited, source, deformation, influence), influence
