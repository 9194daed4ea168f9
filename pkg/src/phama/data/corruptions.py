"""A five-kind subset of common image corruptions with five severities each.

Severity parameters (index = severity - 1):

=============== ============================== =====================================
kind            parameter                      grid
=============== ============================== =====================================
gaussian_noise  noise std                      0.04, 0.095, 0.15, 0.205, 0.26
shot_noise      photon count scale (lower=worse) 60, 25, 12, 5, 3
defocus_blur    disk kernel radius (px)        0.6, 1.0, 1.5, 2.0, 2.5
contrast        contrast retention             0.75, 0.5, 0.4, 0.3, 0.15
brightness      additive brightness            0.1, 0.2, 0.3, 0.4, 0.5
=============== ============================== =====================================
"""
from __future__ import annotations

import numpy as np
from scipy import ndimage

from .augment import as_rng

SEVERITY_GRID = {
    "gaussian_noise": (0.04, 0.095, 0.15, 0.205, 0.26),
    "shot_noise": (60.0, 25.0, 12.0, 5.0, 3.0),
    "defocus_blur": (0.6, 1.0, 1.5, 2.0, 2.5),
    "contrast": (0.75, 0.5, 0.4, 0.3, 0.15),
    "brightness": (0.1, 0.2, 0.3, 0.4, 0.5),
}
CORRUPTIONS = tuple(SEVERITY_GRID)


def disk_kernel(radius: float) -> np.ndarray:
    """Area-weighted disk of the given radius, supersampled for sub-pixel radii."""
    half = int(np.ceil(radius))
    sub = 8
    offs = (np.arange(sub) + 0.5) / sub - 0.5
    grid = np.arange(-half, half + 1)
    yy = grid[:, None, None, None] + offs[None, None, :, None]
    xx = grid[None, :, None, None] + offs[None, None, None, :]
    kernel = ((yy**2 + xx**2) <= radius**2).mean(axis=(2, 3))
    return kernel / kernel.sum()


def corrupt(image: np.ndarray, kind: str, severity: int, seed=0) -> np.ndarray:
    """Apply corruption ``kind`` at ``severity`` (1-5) to a ``C x H x W`` image in [0, 1]."""
    if kind not in SEVERITY_GRID:
        raise ValueError(f"unknown corruption {kind!r}; choose from {CORRUPTIONS}")
    if severity not in (1, 2, 3, 4, 5):
        raise ValueError(f"severity must be an integer in 1..5, got {severity}")
    p = SEVERITY_GRID[kind][severity - 1]
    x = np.asarray(image, dtype=np.float64)
    rng = as_rng(seed)
    if kind == "gaussian_noise":
        out = x + rng.normal(0.0, p, size=x.shape)
    elif kind == "shot_noise":
        out = rng.poisson(np.clip(x, 0, 1) * p) / p
    elif kind == "defocus_blur":
        k = disk_kernel(p)
        out = np.stack([ndimage.convolve(ch, k, mode="reflect") for ch in x])
    elif kind == "contrast":
        mean = x.mean(axis=(-2, -1), keepdims=True)
        out = (x - mean) * p + mean
    else:  # brightness
        out = x + p
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def corrupt_batch(images: np.ndarray, kind: str, severity: int, seed=0) -> np.ndarray:
    rng = as_rng(seed)
    return np.stack([corrupt(im, kind, severity, rng) for im in images])
