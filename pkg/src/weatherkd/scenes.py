"""Procedural clean scenes used as restoration targets.

Each scene layers a smooth color gradient, a handful of soft geometric
shapes, and band-limited texture, so images carry content at several
spatial frequencies without any external data. Scenes are deterministic
functions of their seed.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .errors import ValidationError
from .utils import rng_from


def _gradient(h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    c0 = rng.uniform(0.1, 0.9, size=3)
    c1 = rng.uniform(0.1, 0.9, size=3)
    theta = rng.uniform(0, 2 * np.pi)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    ramp = (np.cos(theta) * xx / max(w - 1, 1)) + (np.sin(theta) * yy / max(h - 1, 1))
    ramp = (ramp - ramp.min()) / max(ramp.max() - ramp.min(), 1e-12)
    return c0[None, None, :] + ramp[:, :, None] * (c1 - c0)[None, None, :]


def _soft_shapes(img: np.ndarray, rng: np.random.Generator, count: int) -> np.ndarray:
    h, w = img.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    for _ in range(count):
        color = rng.uniform(0.05, 0.95, size=3)
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        if rng.random() < 0.5:
            # soft-edged disc
            r = rng.uniform(0.08, 0.3) * min(h, w)
            mask = np.clip((r - np.hypot(yy - cy, xx - cx)) / max(r * 0.2, 1.0) + 0.5, 0, 1)
        else:
            # rotated soft rectangle
            th = rng.uniform(0, np.pi)
            hw = rng.uniform(0.08, 0.35) * w
            hh = rng.uniform(0.08, 0.35) * h
            u = (xx - cx) * np.cos(th) + (yy - cy) * np.sin(th)
            v = -(xx - cx) * np.sin(th) + (yy - cy) * np.cos(th)
            edge = max(0.05 * min(hw, hh), 1.0)
            mask = np.clip((hw - np.abs(u)) / edge, 0, 1) * np.clip((hh - np.abs(v)) / edge, 0, 1)
        alpha = rng.uniform(0.5, 1.0) * mask[:, :, None]
        img = img * (1 - alpha) + color[None, None, :] * alpha
    return img


def _texture(h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    fine = rng.normal(0, 1, size=(h, w, 3))
    coarse = ndimage.gaussian_filter(rng.normal(0, 1, size=(h, w, 3)), sigma=(4, 4, 0))
    coarse /= max(np.abs(coarse).max(), 1e-12)
    return 0.015 * fine + 0.08 * coarse


def make_scene(size: int, seed_keys: tuple) -> np.ndarray:
    """Render one (size, size, 3) clean scene in [0,1] from a seed tuple."""
    if size < 8:
        raise ValidationError(f"scene size {size} too small, need >= 8")
    rng = rng_from(*seed_keys)
    img = _gradient(size, size, rng)
    img = _soft_shapes(img, rng, count=int(rng.integers(3, 7)))
    img = img + _texture(size, size, rng)
    return np.clip(img, 0.0, 1.0)
