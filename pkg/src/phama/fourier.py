"""Amplitude/phase decomposition of images and amplitude-perturbation reconstruction.

Images are ``C x H x W`` float arrays (any number of leading batch axes is
accepted); transforms run over the last two axes in double precision.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

#: imaginary residue (absolute, image units) tolerated by :func:`ifft2`
IMAG_TOLERANCE = 1e-3
#: bins whose modulus is below this fraction of the plane's peak modulus are
#: treated as exact zeros when extracting phase
ZERO_MODULUS_RTOL = 1e-9


class SpectrumError(ValueError):
    """Raised for invalid images, spectra or amplitude planes."""


class PolarSpectrum(NamedTuple):
    amplitude: np.ndarray
    phase: np.ndarray


class Reconstruction(NamedTuple):
    image: np.ndarray
    overflow_fraction: float


def check_image(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim < 2:
        raise SpectrumError(f"image must be at least 2-D, got shape {image.shape}")
    if image.shape[-1] < 2 or image.shape[-2] < 2:
        raise SpectrumError(f"image height and width must be >= 2, got {image.shape[-2:]}")
    if np.iscomplexobj(image):
        raise SpectrumError("image must be real-valued")
    if not np.all(np.isfinite(image)):
        bad = int(np.size(image) - np.count_nonzero(np.isfinite(image)))
        raise SpectrumError(f"image contains {bad} non-finite values")
    return image


def fft2(image: np.ndarray) -> np.ndarray:
    """Unnormalized forward 2-D DFT per channel; DC sits at ``[..., 0, 0]``."""
    image = check_image(image)
    return np.fft.fft2(image.astype(np.float64, copy=False), axes=(-2, -1))


def ifft2(spectrum: np.ndarray, dtype=np.float32) -> np.ndarray:
    """Inverse 2-D DFT with ``1/(H*W)`` normalization, returning a real image.

    Raises :class:`SpectrumError` if the imaginary residue exceeds
    :data:`IMAG_TOLERANCE`, which indicates a spectrum that is not Hermitian.
    """
    spectrum = np.asarray(spectrum)
    if spectrum.ndim < 2 or spectrum.shape[-1] < 2 or spectrum.shape[-2] < 2:
        raise SpectrumError(f"invalid spectrum shape {spectrum.shape}")
    out = np.fft.ifft2(spectrum.astype(np.complex128, copy=False), axes=(-2, -1))
    residue = float(np.max(np.abs(out.imag))) if out.size else 0.0
    if residue > IMAG_TOLERANCE:
        raise SpectrumError(
            f"imaginary residue {residue:.3g} exceeds {IMAG_TOLERANCE}; spectrum is not Hermitian"
        )
    return out.real.astype(dtype, copy=False)


def _zero_bins(modulus: np.ndarray) -> np.ndarray:
    peak = np.max(modulus, axis=(-2, -1), keepdims=True)
    return modulus <= ZERO_MODULUS_RTOL * peak


def to_polar(spectrum: np.ndarray) -> PolarSpectrum:
    """Split a complex spectrum into amplitude and phase in (-pi, pi].

    Zero-modulus bins (within :data:`ZERO_MODULUS_RTOL` of the peak) get
    phase 0.
    """
    spectrum = np.asarray(spectrum, dtype=np.complex128)
    amplitude = np.abs(spectrum)
    phase = np.angle(spectrum)
    # np.angle can return -pi for values on the negative real axis with -0.0 imag
    phase = np.where(phase <= -np.pi, np.pi, phase)
    phase = np.where(_zero_bins(amplitude), 0.0, phase)
    return PolarSpectrum(amplitude, phase)


def from_polar(polar: PolarSpectrum | tuple[np.ndarray, np.ndarray]) -> np.ndarray:
    amplitude, phase = (np.asarray(p, dtype=np.float64) for p in polar)
    if amplitude.shape != phase.shape:
        raise SpectrumError(f"amplitude {amplitude.shape} and phase {phase.shape} differ in shape")
    if np.any(amplitude < 0):
        raise SpectrumError("amplitude must be nonnegative")
    # numpy's forward transform uses exp(-j...), so recomposition uses exp(+j*phase)
    return amplitude * np.exp(1j * phase)


def mix_amplitude(a1: np.ndarray, a2: np.ndarray, lam: float) -> np.ndarray:
    """Convex combination ``(1 - lam) * a1 + lam * a2`` of two amplitude planes."""
    a1 = np.asarray(a1, dtype=np.float64)
    a2 = np.asarray(a2, dtype=np.float64)
    if a1.shape != a2.shape:
        raise SpectrumError(
            f"amplitude shapes differ: {a1.shape} vs {a2.shape}; resize images before mixing"
        )
    lam = np.asarray(lam, dtype=np.float64)
    if np.any(lam < 0) or np.any(lam > 1):
        raise SpectrumError(f"mixing weight must lie in [0, 1], got {lam}")
    if lam.ndim:
        # per-sample weights broadcast over the trailing C x H x W axes
        lam = lam.reshape(lam.shape + (1,) * (a1.ndim - lam.ndim))
    if np.all(lam == 0):
        return a1.copy()
    if np.all(lam == 1):
        return a2.copy()
    return (1.0 - lam) * a1 + lam * a2


def reconstruct_with(amplitude: np.ndarray, phase: np.ndarray, clamp: bool = True) -> Reconstruction:
    """Recompose an image from amplitude and phase planes.

    With ``clamp`` the result is clipped to [0, 1]; ``overflow_fraction`` is
    the fraction of pixels that fell outside that range before clipping.
    """
    raw = ifft2(from_polar((amplitude, phase)))
    outside = (raw < 0) | (raw > 1)
    overflow = float(np.mean(outside)) if raw.size else 0.0
    image = np.clip(raw, 0.0, 1.0) if clamp else raw
    return Reconstruction(image, overflow)


def _minmax(x: np.ndarray) -> np.ndarray:
    lo = x.min(axis=(-2, -1), keepdims=True)
    hi = x.max(axis=(-2, -1), keepdims=True)
    span = hi - lo
    return np.where(span > 0, (x - lo) / np.where(span > 0, span, 1.0), 0.0).astype(np.float32)


def phase_only(image: np.ndarray, rescale: bool = True) -> np.ndarray:
    """Reconstruct from the original phase with unit amplitude."""
    polar = to_polar(fft2(image))
    out = ifft2(from_polar((np.ones_like(polar.amplitude), polar.phase)), dtype=np.float64)
    return _minmax(out) if rescale else out


def amplitude_only(image: np.ndarray, rescale: bool = True) -> np.ndarray:
    """Reconstruct from the original amplitude with zero phase."""
    polar = to_polar(fft2(image))
    out = ifft2(from_polar((polar.amplitude, np.zeros_like(polar.phase))), dtype=np.float64)
    return _minmax(out) if rescale else out


def amplitude_swap_batch(
    images: np.ndarray, partners: np.ndarray, lam: np.ndarray, clamp: bool = True
) -> Reconstruction:
    """Batched amplitude mixing: image ``i`` keeps its phase and takes
    ``(1 - lam[i]) * A_i + lam[i] * A_partners[i]`` as amplitude."""
    spectra = fft2(images)
    polar = to_polar(spectra)
    mixed = mix_amplitude(polar.amplitude, polar.amplitude[partners], lam)
    return reconstruct_with(mixed, polar.phase, clamp=clamp)
