#!/usr/bin/env python3
"""
Anchor correspondence by entropic unbalanced optimal transport.

Cost is the bounded Welsch penalty D = 1 - exp(-d^2 / 2 beta^2) with
beta = gamma * median pairwise distance. The plan minimizes

    <D, P> + lambda0 * sum P (log P - 1)
           + lambda1 * KL(P 1 | a) + lambda2 * KL(P^T 1 | b),   a = 1/n, b = 1/m

and is found by Sinkhorn scaling carried out on log-potentials so that
kernels like exp(-10) never underflow.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List

import numpy as np
from scipy.special import logsumexp

from functions.config import SinkhornConfig
from functions.errors import EmptyAnchorSet

logger = logging.getLogger(__name__)

BETA_FLOOR = 1e-9


@dataclass(frozen=True)
class CostMatrix:
    D: np.ndarray
    beta: float
    d_med: float


@dataclass
class TransportPlan:
    P: np.ndarray
    converged: bool
    iterations: int
    marginal_err: float
    residuals: List[float] = field(default_factory=list)

    def summary(self) -> Dict:
        return {
            "shape": list(self.P.shape),
            "converged": self.converged,
            "iterations": self.iterations,
            "marginal_err": self.marginal_err,
            "mass": float(self.P.sum()),
        }


@dataclass(frozen=True)
class CorrespondenceMap:
    corr: np.ndarray

    def __len__(self) -> int:
        return self.corr.shape[0]

    def to_dict(self) -> Dict:
        return {"corr": [int(i) for i in self.corr]}

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict()))
        return path

    @classmethod
    def load(cls, path) -> "CorrespondenceMap":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Correspondence file not found: {path}")
        return cls(np.asarray(json.loads(path.read_text())["corr"], dtype=np.int64))


def welsch_cost(anchors_src: np.ndarray, anchors_edit: np.ndarray, gamma: float) -> CostMatrix:
    anchors_src = np.asarray(anchors_src, dtype=np.float64).reshape(-1, 3)
    anchors_edit = np.asarray(anchors_edit, dtype=np.float64).reshape(-1, 3)
    if anchors_src.shape[0] == 0 or anchors_edit.shape[0] == 0:
        raise EmptyAnchorSet(f"cannot match {anchors_src.shape[0]} source against "
                             f"{anchors_edit.shape[0]} edit anchors")
    distances = np.linalg.norm(anchors_src[:, None, :] - anchors_edit[None, :, :], axis=2)
    d_med = float(np.median(distances))
    beta = max(gamma * d_med, BETA_FLOOR)
    D = 1.0 - np.exp(-distances ** 2 / (2.0 * beta ** 2))
    return CostMatrix(D=D, beta=beta, d_med=d_med)


def sinkhorn_uot(D: np.ndarray, config: SinkhornConfig = None) -> TransportPlan:
    """Log-domain unbalanced Sinkhorn.

    f, g are lambda0 * log of the row/column scalings. Stops when the sup-norm
    change of (f, g) over one sweep drops below tol.
    """
    config = config or SinkhornConfig()
    D = np.asarray(D, dtype=np.float64)
    n, m = D.shape
    lam = config.lambda0
    tau1 = config.lambda1 / (config.lambda1 + lam)
    tau2 = config.lambda2 / (config.lambda2 + lam)
    log_a = np.full(n, -np.log(n))
    log_b = np.full(m, -np.log(m))
    scaled = -D / lam

    f = np.zeros(n)
    g = np.zeros(m)
    residuals = []
    converged = False
    iteration = 0
    for iteration in range(1, config.max_iters + 1):
        f_new = tau1 * lam * (log_a - logsumexp(scaled + g[None, :] / lam, axis=1))
        g_new = tau2 * lam * (log_b - logsumexp(scaled + f_new[:, None] / lam, axis=0))
        residual = max(np.max(np.abs(f_new - f)), np.max(np.abs(g_new - g)))
        f, g = f_new, g_new
        residuals.append(float(residual))
        if residual < config.tol:
            converged = True
            break

    P = np.exp(scaled + f[:, None] / lam + g[None, :] / lam)
    marginal_err = residuals[-1] if residuals else 0.0
    if not converged:
        logger.warning(f"Sinkhorn did not converge in {config.max_iters} iterations (residual {marginal_err:.3e})")
    return TransportPlan(P=P, converged=converged, iterations=iteration,
                         marginal_err=marginal_err, residuals=residuals)


def extract_correspondence(P: np.ndarray) -> CorrespondenceMap:
    """corr[j] = argmax_i P[i, j]; np.argmax keeps the smallest index on ties."""
    return CorrespondenceMap(np.argmax(np.asarray(P), axis=0).astype(np.int64))


def match_anchors(anchors_src: np.ndarray, anchors_edit: np.ndarray, config: SinkhornConfig = None):
    config = config or SinkhornConfig()
    cost = welsch_cost(anchors_src, anchors_edit, config.gamma)
    plan = sinkhorn_uot(cost.D, config)
    corr = extract_correspondence(plan.P)
    logger.info(f"Matched {cost.D.shape[1]} edit anchors to {cost.D.shape[0]} source anchors: "
                f"{plan.iterations} iterations, residual {plan.marginal_err:.3e}, beta {cost.beta:.4g}")
    return cost, plan, corr
