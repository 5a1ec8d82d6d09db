"""Image fidelity metrics: Y-channel extraction, PSNR, SSIM, and the edge
preservation index. All functions take plain numpy arrays in [0, 1] and
compute in float64."""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .engine import InvalidArgumentError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def rgb_to_y(img: np.ndarray) -> np.ndarray:
    """BT.601 studio-swing luminance of (..., 3, h, w) arrays in [0, 1].

    Y = (65.481 R + 128.553 G + 24.966 B + 16) / 255, range [16/255, 235/255].
    """
    if img.ndim < 3 or img.shape[-3] != 3:
        raise InvalidArgumentError(
            f"rgb_to_y expects (..., 3, h, w), got shape {img.shape}")
    r = img[..., 0, :, :]
    g = img[..., 1, :, :]
    b = img[..., 2, :, :]
    y = (65.481 * r + 128.553 * g + 24.966 * b + 16.0) / 255.0
    return y[..., None, :, :]


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """10 * log10(peak^2 / MSE); math.inf when the images are identical."""
    if a.shape != b.shape:
        raise InvalidArgumentError(f"psnr shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _gaussian_1d(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    k = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    return k / k.sum()


def _filter_valid(img: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Separable valid-region correlation with a symmetric 1D kernel."""
    v = sliding_window_view(img, len(k), axis=0) @ k
    return sliding_window_view(v, len(k), axis=1) @ k


def ssim(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Mean local SSIM, 11x11 Gaussian window (sigma 1.5), valid region only."""
    if a.shape != b.shape:
        raise InvalidArgumentError(f"ssim shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise InvalidArgumentError("ssim expects single-channel 2D arrays")
    if min(a.shape) < SSIM_WINDOW:
        raise InvalidArgumentError(
            f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW} for ssim")
    x = a.astype(np.float64)
    y = b.astype(np.float64)
    k = _gaussian_1d(SSIM_WINDOW, SSIM_SIGMA)
    mu_x = _filter_valid(x, k)
    mu_y = _filter_valid(y, k)
    var_x = _filter_valid(x * x, k) - mu_x * mu_x
    var_y = _filter_valid(y * y, k) - mu_y * mu_y
    cov = _filter_valid(x * y, k) - mu_x * mu_y
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def _laplacian_valid(img: np.ndarray) -> np.ndarray:
    x = img.astype(np.float64)
    return (x[:-2, 1:-1] + x[2:, 1:-1] + x[1:-1, :-2] + x[1:-1, 2:]
            - 4.0 * x[1:-1, 1:-1])


def epi(a: np.ndarray, b: np.ndarray) -> float:
    """Edge preservation index: Pearson correlation of Laplacian high-pass
    responses. 1.0 for identical images; defined as 1.0 when both responses
    are exactly constant and equal, 0.0 when only one is constant."""
    if a.shape != b.shape:
        raise InvalidArgumentError(f"epi shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise InvalidArgumentError("epi expects single-channel 2D arrays")
    la = _laplacian_valid(a)
    lb = _laplacian_valid(b)
    la = la - la.mean()
    lb = lb - lb.mean()
    num = float(np.sum(la * lb))
    den = math.sqrt(float(np.sum(la * la)) * float(np.sum(lb * lb)))
    if den == 0.0:
        return 1.0 if np.array_equal(la, lb) else 0.0
    return num / den
