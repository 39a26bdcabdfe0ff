#!/usr/bin/env python3
"""
Real spherical-harmonics basis (degree <= 3) for view-dependent Gaussian color.

Coefficients are stored per channel in band order l = 0..3, m = -l..l.
Colors follow the splatting convention color = SH(sh, dir) + 0.5, so a
degree-0 coefficient of (c - 0.5) / C0 renders as c.
"""

import numpy as np

from functions.errors import SizeMismatch

C0 = 0.28209479177387814
C1 = 0.4886025119029199
C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)

COLOR_OFFSET = 0.5


def sh_basis(degree: int, dirs: np.ndarray) -> np.ndarray:
    """Basis values for unit directions (N,3) -> (N, (degree+1)^2)."""
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    n = dirs.shape[0]
    basis = np.zeros((n, (degree + 1) ** 2))
    basis[:, 0] = C0
    if degree > 0:
        x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
        basis[:, 1] = -C1 * y
        basis[:, 2] = C1 * z
        basis[:, 3] = -C1 * x
        if degree > 1:
            xx, yy, zz = x * x, y * y, z * z
            xy, yz, xz = x * y, y * z, x * z
            basis[:, 4] = C2[0] * xy
            basis[:, 5] = C2[1] * yz
            basis[:, 6] = C2[2] * (2.0 * zz - xx - yy)
            basis[:, 7] = C2[3] * xz
            basis[:, 8] = C2[4] * (xx - yy)
            if degree > 2:
                basis[:, 9] = C3[0] * y * (3 * xx - yy)
                basis[:, 10] = C3[1] * xy * z
                basis[:, 11] = C3[2] * y * (4 * zz - xx - yy)
                basis[:, 12] = C3[3] * z * (2 * zz - 3 * xx - 3 * yy)
                basis[:, 13] = C3[4] * x * (4 * zz - xx - yy)
                basis[:, 14] = C3[5] * z * (xx - yy)
                basis[:, 15] = C3[6] * x * (xx - 3 * yy)
    return basis


def eval_sh(sh: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Raw SH value per channel, (N,3,K) coefficients and (N,3) dirs -> (N,3)."""
    sh = np.asarray(sh, dtype=np.float64)
    degree = int(round(np.sqrt(sh.shape[-1]))) - 1
    basis = sh_basis(degree, dirs)
    if basis.shape[0] != sh.shape[0]:
        raise SizeMismatch(f"{sh.shape[0]} coefficient sets for {basis.shape[0]} directions")
    return np.einsum("nck,nk->nc", sh, basis)


def sh_to_color(sh: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Unclamped RGB per Gaussian."""
    return eval_sh(sh, dirs) + COLOR_OFFSET


def rgb_to_sh(rgb: np.ndarray) -> np.ndarray:
    return (np.asarray(rgb, dtype=np.float64) - COLOR_OFFSET) / C0


def sh_from_rgb(rgb: np.ndarray, degree: int) -> np.ndarray:
    """Constant-color coefficients (N,3,K): DC band set, higher bands zero."""
    rgb = np.asarray(rgb, dtype=np.float64).reshape(-1, 3)
    sh = np.zeros((rgb.shape[0], 3, (degree + 1) ** 2))
    sh[:, :, 0] = rgb_to_sh(rgb)
    return sh
