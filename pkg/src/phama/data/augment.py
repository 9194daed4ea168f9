"""Standard image augmentation and amplitude-perturbation pair assembly."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torchvision.transforms.functional as TF

from .. import fourier


def as_rng(seed) -> np.random.Generator:
    """Accept a Generator, an int, or a sequence such as ``(seed, epoch, index)``."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class AugmentParams:
    crop_scale: tuple[float, float] = (0.8, 1.0)
    crop_ratio: tuple[float, float] = (3 / 4, 4 / 3)
    flip_p: float = 0.5
    brightness: float = 0.4
    contrast: float = 0.4
    saturation: float = 0.4


IDENTITY_AUGMENT = AugmentParams(crop_scale=(1.0, 1.0), flip_p=0.0, brightness=0.0, contrast=0.0, saturation=0.0)


def _crop_box(h, w, params: AugmentParams, rng) -> tuple[int, int, int, int]:
    lo, hi = params.crop_scale
    if lo >= 1.0:
        return 0, 0, h, w
    area = h * w
    log_ratio = (math.log(params.crop_ratio[0]), math.log(params.crop_ratio[1]))
    for _ in range(10):
        target = area * rng.uniform(lo, hi)
        ratio = math.exp(rng.uniform(*log_ratio))
        cw = int(round(math.sqrt(target * ratio)))
        ch = int(round(math.sqrt(target / ratio)))
        if 0 < cw <= w and 0 < ch <= h:
            top = int(rng.integers(0, h - ch + 1))
            left = int(rng.integers(0, w - cw + 1))
            return top, left, ch, cw
    return 0, 0, h, w


def standard_augment(image: np.ndarray, seed, params: AugmentParams = AugmentParams()) -> np.ndarray:
    """Random resized crop, horizontal flip and colour jitter of one ``C x H x W`` image."""
    rng = as_rng(seed)
    c, h, w = image.shape
    x = torch.tensor(np.asarray(image), dtype=torch.float32)
    top, left, ch, cw = _crop_box(h, w, params, rng)
    if (ch, cw) != (h, w):
        x = TF.resized_crop(x, top, left, ch, cw, [h, w], antialias=True)
    if rng.uniform() < params.flip_p:
        x = TF.hflip(x)
    # factors are always drawn so the stream position does not depend on the image
    factors = [rng.uniform(max(0.0, 1 - m), 1 + m) for m in (params.brightness, params.contrast, params.saturation)]
    b, k, s = factors
    if b != 1.0:
        x = TF.adjust_brightness(x, b)
    if k != 1.0:
        x = TF.adjust_contrast(x, k) if c == 3 else (x - x.mean()) * k + x.mean()
    if s != 1.0 and c == 3:
        x = TF.adjust_saturation(x, s)
    return x.clamp(0.0, 1.0).numpy()


@dataclass
class AugmentedPair:
    original: np.ndarray
    augmented: np.ndarray
    label: int
    lam: float
    partner: int
    overflow_fraction: float


def sample_partners(n: int, rng, domains: np.ndarray | None = None, cross_domain: bool = False) -> np.ndarray:
    """Uniform partner index per batch element; self-pairing is allowed.

    With ``cross_domain`` the partner is drawn from a different domain when
    the batch contains one.
    """
    if not cross_domain or domains is None:
        return rng.integers(0, n, size=n)
    partners = np.empty(n, dtype=np.int64)
    for i in range(n):
        pool = np.flatnonzero(domains != domains[i])
        partners[i] = rng.choice(pool) if pool.size else rng.integers(0, n)
    return partners


def apda_arrays(images: np.ndarray, eta: float, seed, domains=None, cross_domain: bool = False, clamp: bool = True):
    """Batched amplitude perturbation.

    Returns ``(augmented, lam, partners, overflow)``; ``augmented[i]`` keeps
    the phase of ``images[i]`` and mixes its amplitude with that of
    ``images[partners[i]]`` using weight ``lam[i] ~ U(0, eta)``.  ``overflow``
    holds each image's pre-clamp fraction of pixels outside [0, 1].
    """
    images = np.asarray(images)
    if images.ndim != 4:
        raise ValueError(f"expected a batch of C x H x W images, got shape {images.shape}")
    n = images.shape[0]
    if n < 2:
        raise ValueError("amplitude perturbation needs a batch of at least 2 images")
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta must lie in [0, 1], got {eta}")
    rng = as_rng(seed)
    partners = sample_partners(n, rng, domains, cross_domain)
    lam = rng.uniform(0.0, eta, size=n) if eta > 0 else np.zeros(n)
    raw = fourier.amplitude_swap_batch(images, partners, lam, clamp=False).image
    overflow = np.mean((raw < 0) | (raw > 1), axis=(1, 2, 3))
    if clamp:
        raw = np.clip(raw, 0.0, 1.0)
    return raw.astype(np.float32), lam, partners, overflow


def make_apda_batch(batch, eta: float, seed, cross_domain: bool = False, clamp: bool = True) -> list[AugmentedPair]:
    """Build amplitude-perturbed pairs for a batch of samples.

    ``batch`` is a sequence of objects with ``image``, ``label`` and
    ``domain_id`` attributes (e.g. :class:`DomainSample`).
    """
    shapes = {np.shape(s.image) for s in batch}
    if len(shapes) != 1:
        raise ValueError(f"batch mixes image shapes {sorted(shapes)}")
    images = np.stack([s.image for s in batch])
    domains = np.array([s.domain_id for s in batch])
    augmented, lam, partners, overflow = apda_arrays(images, eta, seed, domains, cross_domain, clamp)
    return [
        AugmentedPair(s.image, augmented[i], int(s.label), float(lam[i]), int(partners[i]), float(overflow[i]))
        for i, s in enumerate(batch)
    ]
