"""Frequency statistics of amplitude spectra and dataset-level spectral audits."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fourier import fft2, to_polar


class UndefinedStatistic(ValueError):
    pass


@dataclass(frozen=True)
class SpectralStats:
    sample_id: int
    domain: str
    centroid_frequency: float
    frequency_std: float


def _weights(amplitudes) -> tuple[np.ndarray, np.ndarray, float]:
    x = np.asarray(amplitudes, dtype=np.float64).ravel()
    if x.size == 0 or np.any(x < 0):
        raise ValueError("amplitudes must be a non-empty array of nonnegative values")
    power = x * x
    total = float(power.sum())
    if total <= 0.0:
        raise UndefinedStatistic("undefined statistic: all amplitudes are zero")
    return x, power, total


def centroid_frequency(amplitudes) -> float:
    """Power-weighted mean of the amplitude values, ``sum(X^3) / sum(X^2)``.

    The weights are the amplitudes' own squared values and the averaged
    quantity is the amplitude itself, not a frequency coordinate.
    """
    x, power, total = _weights(amplitudes)
    return float(np.dot(x, power) / total)


def frequency_std(amplitudes) -> float:
    """Power-weighted dispersion of amplitude values around :func:`centroid_frequency`."""
    x, power, total = _weights(amplitudes)
    fc = float(np.dot(x, power) / total)
    return float(np.sqrt(np.dot((x - fc) ** 2, power) / total))


def low_frequency_filter(amplitude: np.ndarray, keep_fraction: float = 0.25) -> np.ndarray:
    """Center-shift an ``H x W`` (or ``C x H x W``) amplitude plane, crop the
    central ``keep_fraction`` window and return ``log1p`` of it flattened row-major."""
    if not 0 < keep_fraction <= 1:
        raise ValueError(f"keep_fraction must lie in (0, 1], got {keep_fraction}")
    amplitude = np.asarray(amplitude, dtype=np.float64)
    h, w = amplitude.shape[-2:]
    kh, kw = int(round(keep_fraction * h)), int(round(keep_fraction * w))
    if kh < 2 or kw < 2:
        raise ValueError(f"crop window {kh}x{kw} is smaller than 2x2")
    shifted = np.fft.fftshift(amplitude, axes=(-2, -1))
    top, left = h // 2 - kh // 2, w // 2 - kw // 2
    window = shifted[..., top : top + kh, left : left + kw]
    return np.log1p(window).ravel()


def image_stats(image: np.ndarray) -> tuple[float, float]:
    """Channel-averaged (F_c, F_std) of an image's full amplitude spectrum."""
    return amplitude_stats(to_polar(fft2(image)).amplitude)


def amplitude_stats(amp: np.ndarray) -> tuple[float, float]:
    amp = amp.reshape(-1, *amp.shape[-2:])
    fcs = [centroid_frequency(a) for a in amp]
    stds = [frequency_std(a) for a in amp]
    return float(np.mean(fcs)), float(np.mean(stds))


@dataclass
class SpectralAudit:
    stats: list[SpectralStats]
    embeddings: np.ndarray  # rows aligned with ``stats``
    keep_fraction: float
    seed: int

    def domain_values(self, domain: str, field: str = "frequency_std") -> np.ndarray:
        return np.array([getattr(s, field) for s in self.stats if s.domain == domain])

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "stats.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["sample_id", "domain", "f_c", "f_std"])
            for s in self.stats:
                writer.writerow([s.sample_id, s.domain, repr(s.centroid_frequency), repr(s.frequency_std)])
        emb = np.ascontiguousarray(self.embeddings, dtype="<f4")
        emb.tofile(out / "embeddings.f32")
        sidecar = {
            "rows": int(emb.shape[0]),
            "cols": int(emb.shape[1]) if emb.ndim == 2 else 0,
            "dtype": "float32",
            "byte_order": "little",
            "layout": "row-major",
            "keep_fraction": self.keep_fraction,
            "transform": "log1p",
            "seed": self.seed,
            "sample_id": [s.sample_id for s in self.stats],
            "domain": [s.domain for s in self.stats],
        }
        (out / "embeddings.json").write_text(json.dumps(sidecar, indent=1))


def audit_dataset(dataset, per_domain: int = 1500, keep_fraction: float = 0.25, seed: int = 0) -> SpectralAudit:
    """Sample up to ``per_domain`` images from every domain and compute their
    spectral statistics and low-frequency amplitude embeddings.

    Rows are sorted by ``sample_id`` so the output does not depend on the
    order in which samples were processed.
    """
    rng = np.random.default_rng(seed)
    chosen: list[int] = []
    for d, name in enumerate(dataset.domain_names):
        idx = np.flatnonzero(dataset.domains == d)
        if idx.size == 0:
            raise ValueError(f"domain {name!r} has no samples")
        take = min(per_domain, idx.size)
        chosen.extend(rng.choice(idx, size=take, replace=False).tolist())
    chosen.sort(key=lambda i: int(dataset.sample_ids[i]))

    stats, rows = [], []
    for i in chosen:
        amp = to_polar(fft2(dataset.images[i])).amplitude
        fc, fstd = amplitude_stats(amp)
        stats.append(SpectralStats(int(dataset.sample_ids[i]), dataset.domain_names[dataset.domains[i]], fc, fstd))
        rows.append(low_frequency_filter(amp, keep_fraction))
    return SpectralAudit(stats, np.asarray(rows, dtype=np.float32), keep_fraction, seed)
