#!/usr/bin/env python3
"""
SSIM with an 11x11 Gaussian window (sigma 1.5) and its exact gradient with
respect to the first image.

Images are H x W x C float arrays on the [0, 1] range. Window sums use
zero padding at the borders; the separable kernel is symmetric, so the same
filter is its own adjoint in the backward pass.
"""

from typing import Tuple

import numpy as np
from scipy import ndimage

WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5
C1 = 0.01 ** 2
C2 = 0.03 ** 2


def gaussian_window(size: int = WINDOW_SIZE, sigma: float = WINDOW_SIGMA) -> np.ndarray:
    offsets = np.arange(size, dtype=np.float64) - size // 2
    gauss = np.exp(-offsets ** 2 / (2.0 * sigma ** 2))
    return gauss / gauss.sum()


_WINDOW = gaussian_window()


def _blur(image: np.ndarray) -> np.ndarray:
    out = ndimage.convolve1d(image, _WINDOW, axis=0, mode="constant", cval=0.0)
    return ndimage.convolve1d(out, _WINDOW, axis=1, mode="constant", cval=0.0)


def ssim_map(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return _ssim_terms(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))[0]


def _ssim_terms(x: np.ndarray, y: np.ndarray):
    mu_x = _blur(x)
    mu_y = _blur(y)
    e_xx = _blur(x * x)
    e_yy = _blur(y * y)
    e_xy = _blur(x * y)
    var_x = e_xx - mu_x ** 2
    var_y = e_yy - mu_y ** 2
    cov = e_xy - mu_x * mu_y

    a1 = 2.0 * mu_x * mu_y + C1
    a2 = 2.0 * cov + C2
    b1 = mu_x ** 2 + mu_y ** 2 + C1
    b2 = var_x + var_y + C2
    s = (a1 * a2) / (b1 * b2)
    return s, mu_x, mu_y, a1, a2, b1, b2


def weighted_ssim(x: np.ndarray, y: np.ndarray, weights: np.ndarray) -> Tuple[float, np.ndarray]:
    """Sum of weights * SSIM(x, y) and its gradient with respect to x.

    `weights` broadcasts against the SSIM map (H x W x C); a weight map that sums
    to one gives a (masked) mean SSIM.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    weights = np.broadcast_to(np.asarray(weights, dtype=np.float64), x.shape)
    s, mu_x, mu_y, a1, a2, b1, b2 = _ssim_terms(x, y)
    value = float(np.sum(weights * s))

    d_mu = s * (2.0 * mu_y / a1 - 2.0 * mu_y / a2 - 2.0 * mu_x / b1 + 2.0 * mu_x / b2)
    d_exy = s * 2.0 / a2
    d_exx = -s / b2
    grad = (_blur(weights * d_mu)
            + 2.0 * x * _blur(weights * d_exx)
            + y * _blur(weights * d_exy))
    return value, grad
