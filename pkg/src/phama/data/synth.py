"""Desk-scale synthetic multi-domain benchmark.

Each class is a glyph shape rendered with random placement, scale and
rotation; each domain applies one label-preserving appearance transform
(colour, texture, blur, spectral noise, contrast).  Shape lives in the phase
spectrum while most domain transforms act on the amplitude spectrum, which
is the regime amplitude-perturbation training targets.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .dataset import MultiDomainDataset, stratified_split

GLYPHS = ("circle", "square", "triangle", "cross", "ring", "hbar", "diamond", "ell", "xmark", "vbar")
DOMAIN_TRANSFORMS = ("identity", "color_map", "texture", "blur", "spectral_noise", "contrast")


@dataclass(frozen=True)
class SynthSpec:
    domains: tuple[str, ...] = ("identity", "color_map", "texture", "spectral_noise")
    num_classes: int = 5
    per_class: int = 200
    image_size: int = 32
    val_fraction: float = 0.1


def _rotate(u, v, angle):
    c, s = np.cos(angle), np.sin(angle)
    return c * u + s * v, -s * u + c * v


def _sdf(glyph: str, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Approximate signed distance (negative inside) in unit glyph coordinates."""
    au, av = np.abs(u), np.abs(v)
    if glyph == "circle":
        return np.hypot(u, v) - 0.8
    if glyph == "square":
        return np.maximum(au, av) - 0.7
    if glyph == "ring":
        return np.abs(np.hypot(u, v) - 0.65) - 0.18
    if glyph == "triangle":
        # equilateral-ish triangle pointing up
        return np.maximum.reduce([v - 0.6, -0.866 * u - 0.5 * v - 0.45, 0.866 * u - 0.5 * v - 0.45])
    if glyph == "cross":
        return np.minimum(np.maximum(au - 0.22, av - 0.85), np.maximum(au - 0.85, av - 0.22))
    if glyph == "hbar":
        return np.maximum(au - 0.9, av - 0.25)
    if glyph == "vbar":
        return np.maximum(au - 0.25, av - 0.9)
    if glyph == "diamond":
        return (au + av) / np.sqrt(2) - 0.6
    if glyph == "ell":
        vertical = np.maximum(np.abs(u + 0.5) - 0.22, av - 0.85)
        foot = np.maximum(au - 0.72, np.abs(v - 0.63) - 0.22)
        return np.minimum(vertical, foot)
    if glyph == "xmark":
        ru, rv = _rotate(u, v, np.pi / 4)
        ru, rv = np.abs(ru), np.abs(rv)
        return np.minimum(np.maximum(ru - 0.2, rv - 0.95), np.maximum(ru - 0.95, rv - 0.2))
    raise ValueError(f"unknown glyph {glyph!r}")


def render_glyph(glyph: str, size: int, rng: np.random.Generator) -> np.ndarray:
    """Anti-aliased ``size x size`` foreground mask in [0, 1]."""
    grid = (np.arange(size) + 0.5) / size * 2 - 1
    y, x = np.meshgrid(grid, grid, indexing="ij")
    scale = rng.uniform(0.55, 0.85)
    cx, cy = rng.uniform(-0.15, 0.15, size=2)
    angle = rng.uniform(-0.3, 0.3)
    u, v = _rotate((x - cx) / scale, (y - cy) / scale, angle)
    d = _sdf(glyph, u, v) * scale
    pixel = 2.0 / size
    return np.clip(0.5 - d / pixel, 0.0, 1.0)


def _random_color(rng, lo=0.0, hi=1.0):
    return rng.uniform(lo, hi, size=3)[:, None, None]


def _grating(size, rng):
    grid = np.arange(size)
    y, x = np.meshgrid(grid, grid, indexing="ij")
    out = np.zeros((size, size))
    for _ in range(2):
        freq = rng.uniform(0.15, 0.45)
        theta = rng.uniform(0, np.pi)
        out += np.sin(2 * np.pi * freq * (np.cos(theta) * x + np.sin(theta) * y) + rng.uniform(0, 2 * np.pi))
    return 0.5 + 0.25 * out


def apply_domain(mask: np.ndarray, transform: str, rng: np.random.Generator) -> np.ndarray:
    """Turn a glyph mask into a 3-channel image in the given domain style."""
    size = mask.shape[-1]
    if transform == "identity":
        img = np.repeat(mask[None], 3, axis=0)
    elif transform == "color_map":
        fg = _random_color(rng)
        bg = _random_color(rng)
        # keep enough luminance separation for the glyph to stay visible
        while abs(fg.mean() - bg.mean()) < 0.3:
            fg, bg = _random_color(rng), _random_color(rng)
        img = bg + (fg - bg) * mask[None]
    elif transform == "texture":
        tex = np.stack([_grating(size, rng) for _ in range(3)]) * _random_color(rng, 0.5, 1.0)
        fg = _random_color(rng, 0.0, 1.0)
        img = tex * (1 - mask[None]) + fg * mask[None]
    elif transform == "blur":
        img = np.repeat(ndimage.gaussian_filter(mask, sigma=rng.uniform(1.2, 2.0))[None], 3, axis=0)
    elif transform == "spectral_noise":
        noise = rng.standard_normal((3, size, size))
        # keep only the upper half of the frequency band
        f = np.fft.fftfreq(size)
        radius = np.hypot(*np.meshgrid(f, f, indexing="ij"))
        spec = np.fft.fft2(noise) * (radius > 0.25)
        hf = np.fft.ifft2(spec).real
        hf /= hf.std() + 1e-12
        img = np.repeat(mask[None], 3, axis=0) * 0.8 + 0.1 + rng.uniform(0.15, 0.3) * hf
    elif transform == "contrast":
        level = rng.uniform(0.25, 0.75)
        spread = rng.uniform(0.12, 0.25)
        img = np.repeat((level - spread / 2 + spread * mask)[None], 3, axis=0)
    else:
        raise ValueError(f"unknown domain transform {transform!r}; choose from {DOMAIN_TRANSFORMS}")
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def synth_domains(spec: SynthSpec = SynthSpec(), seed: int = 0) -> MultiDomainDataset:
    if len(spec.domains) < 2:
        raise ValueError("synthetic benchmark needs at least 2 domains")
    for t in spec.domains:
        if t not in DOMAIN_TRANSFORMS:
            raise ValueError(f"unknown domain transform {t!r}; choose from {DOMAIN_TRANSFORMS}")
    if not 2 <= spec.num_classes <= len(GLYPHS):
        raise ValueError(f"num_classes must lie in [2, {len(GLYPHS)}]")

    names, seen = [], {}
    for t in spec.domains:
        seen[t] = seen.get(t, 0) + 1
        names.append(t if spec.domains.count(t) == 1 else f"{t}{seen[t]}")

    images, labels, domains, splits = [], [], [], []
    for d, transform in enumerate(spec.domains):
        rng = np.random.default_rng([seed, d])
        dom_labels = np.repeat(np.arange(spec.num_classes), spec.per_class)
        for label in dom_labels:
            mask = render_glyph(GLYPHS[label], spec.image_size, rng)
            images.append(apply_domain(mask, transform, rng))
        labels.append(dom_labels)
        domains.append(np.full(dom_labels.size, d))
        splits.append(stratified_split(dom_labels, spec.val_fraction, rng))
    return MultiDomainDataset(
        images=np.stack(images),
        labels=np.concatenate(labels).astype(np.int64),
        domains=np.concatenate(domains).astype(np.int64),
        splits=np.concatenate(splits),
        domain_names=tuple(names),
        class_names=GLYPHS[: spec.num_classes],
        source=f"synthetic:{','.join(spec.domains)}",
    )
