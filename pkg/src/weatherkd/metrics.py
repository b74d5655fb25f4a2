"""Restoration quality metrics.

PSNR and SSIM over float images in [0,1]. SSIM follows the classic single
scale formulation: 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03,
computed on BT.601 luma over valid windows only (no padding), so
ssim(a, a) == 1.0 exactly and ssim is symmetric in its arguments.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ValidationError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

LUMA_WEIGHTS = (0.299, 0.587, 0.114)  # BT.601


def _check_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch {a.shape} vs {b.shape}")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise ValidationError("images must be finite")
    return a, b


def to_luma(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.ndim == 3 and img.shape[2] == 3:
        r, g, b = LUMA_WEIGHTS
        return r * img[:, :, 0] + g * img[:, :, 1] + b * img[:, :, 2]
    raise ValidationError(f"expected (H, W) or (H, W, 3) image, got {img.shape}")


def quantize(img: np.ndarray) -> np.ndarray:
    """Round-trip through 8-bit levels without changing dtype."""
    return np.rint(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


def psnr(a: np.ndarray, b: np.ndarray, *, use_quantized: bool = False,
         use_luma: bool = False) -> float:
    """Peak signal-to-noise ratio in dB against peak 1.0; inf when identical."""
    a, b = _check_pair(a, b)
    if use_quantized:
        a, b = quantize(a), quantize(b)
    if use_luma:
        a, b = to_luma(a), to_luma(b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 2D Gaussian weighting window."""
    half = (size - 1) / 2.0
    coords = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean structural similarity over valid 11x11 windows of the luma planes."""
    a, b = _check_pair(a, b)
    x, y = to_luma(a), to_luma(b)
    h, w = x.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ValidationError(f"image {h}x{w} smaller than SSIM window {SSIM_WINDOW}")
    kernel = gaussian_window()

    def wmean(img: np.ndarray) -> np.ndarray:
        wins = sliding_window_view(img, (SSIM_WINDOW, SSIM_WINDOW))
        return np.tensordot(wins, kernel, axes=([2, 3], [0, 1]))

    mu_x = wmean(x)
    mu_y = wmean(y)
    # biased (weighted) second moments
    var_x = wmean(x * x) - mu_x * mu_x
    var_y = wmean(y * y) - mu_y * mu_y
    cov = wmean(x * y) - mu_x * mu_y

    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def batch_psnr(outputs: np.ndarray, targets: np.ndarray, **kw) -> list:
    return [psnr(o, t, **kw) for o, t in zip(outputs, targets)]


def batch_ssim(outputs: np.ndarray, targets: np.ndarray) -> list:
    return [ssim(o, t) for o, t in zip(outputs, targets)]
