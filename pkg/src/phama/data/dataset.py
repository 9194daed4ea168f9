"""Multi-domain labelled image collections and folder ingestion."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".tif", ".tiff", ".webp"}
TRAIN, VAL = 0, 1


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class DomainSample:
    image: np.ndarray
    label: int
    domain_id: int
    sample_id: int


@dataclass(frozen=True, eq=False)
class MultiDomainDataset:
    """Images of shape ``(n, C, H, W)`` in [0, 1] with per-sample label,
    domain index, split flag (0 = train, 1 = val) and a stable sample id."""

    images: np.ndarray
    labels: np.ndarray
    domains: np.ndarray
    splits: np.ndarray
    domain_names: tuple[str, ...]
    class_names: tuple[str, ...]
    sample_ids: np.ndarray = field(default=None)
    source: str = ""

    def __post_init__(self):
        if self.sample_ids is None:
            object.__setattr__(self, "sample_ids", np.arange(len(self.labels), dtype=np.int64))
        for arr in (self.images, self.labels, self.domains, self.splits, self.sample_ids):
            arr.setflags(write=False)
        n = len(self.labels)
        if not (len(self.images) == len(self.domains) == len(self.splits) == len(self.sample_ids) == n):
            raise DatasetError("per-sample arrays have inconsistent lengths")
        if n and (self.labels.max() >= self.num_classes or self.labels.min() < 0):
            raise DatasetError("label out of range")
        if n and (self.domains.max() >= self.num_domains or self.domains.min() < 0):
            raise DatasetError("domain index out of range")

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i: int) -> DomainSample:
        return DomainSample(self.images[i], int(self.labels[i]), int(self.domains[i]), int(self.sample_ids[i]))

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def num_domains(self) -> int:
        return len(self.domain_names)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def domain_index(self, domain: str | int) -> int:
        if isinstance(domain, (int, np.integer)):
            if not 0 <= domain < self.num_domains:
                raise DatasetError(f"domain index {domain} out of range [0, {self.num_domains})")
            return int(domain)
        if domain in self.domain_names:
            return self.domain_names.index(domain)
        if str(domain).isdigit():
            return self.domain_index(int(domain))
        raise DatasetError(f"unknown domain {domain!r}; available: {list(self.domain_names)}")

    def indices(self, domains=None, split: int | None = None) -> np.ndarray:
        mask = np.ones(len(self), dtype=bool)
        if domains is not None:
            ids = [self.domain_index(d) for d in domains]
            mask &= np.isin(self.domains, ids)
        if split is not None:
            mask &= self.splits == split
        return np.flatnonzero(mask)

    def check(self) -> list[str]:
        """Return warnings about split overlap and per-domain class coverage."""
        problems = []
        for d, name in enumerate(self.domain_names):
            present = set(self.labels[self.indices([d], TRAIN)].tolist())
            missing = [self.class_names[c] for c in range(self.num_classes) if c not in present]
            if missing:
                problems.append(f"domain {name!r} train split lacks classes {missing}")
        return problems

    def describe(self) -> dict:
        out = {
            "source": self.source,
            "num_domains": self.num_domains,
            "num_classes": self.num_classes,
            "image_shape": list(self.image_shape),
            "num_samples": len(self),
            "domains": {},
        }
        for d, name in enumerate(self.domain_names):
            idx = self.indices([d])
            out["domains"][name] = {
                "samples": int(idx.size),
                "train": int(np.sum(self.splits[idx] == TRAIN)),
                "val": int(np.sum(self.splits[idx] == VAL)),
                "per_class": {
                    self.class_names[c]: int(np.sum(self.labels[idx] == c)) for c in range(self.num_classes)
                },
            }
        return out


def stratified_split(labels: np.ndarray, val_fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Per-class random split; classes with a single sample stay in train."""
    splits = np.full(len(labels), TRAIN, dtype=np.int8)
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        n_val = int(np.floor(val_fraction * idx.size))
        if n_val:
            splits[rng.choice(idx, size=n_val, replace=False)] = VAL
    return splits


def _read_image(path: Path, size: int | None) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im = im.convert("RGB")
            if size is not None and im.size != (size, size):
                im = im.resize((size, size), Image.BILINEAR)
            arr = np.asarray(im, dtype=np.float32) / 255.0
    except Exception as exc:  # PIL raises a zoo of exception types
        raise DatasetError(f"cannot read image {path}: {exc}") from exc
    return arr.transpose(2, 0, 1)


def _read_split_file(path: Path) -> set[str]:
    entries = set()
    for line in path.read_text().splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            entries.add(line.split()[0].replace("\\", "/"))
    return entries


def load_folder_dataset(
    root: str | Path, image_size: int | None = 32, val_fraction: float = 0.1, seed: int = 0
) -> MultiDomainDataset:
    """Load ``root/<domain>/<class>/<image>`` into a :class:`MultiDomainDataset`.

    Domains and classes are ordered lexicographically; labels come from the
    sorted union of class names.  If ``root/splits/<domain>_train.txt`` and
    ``<domain>_val.txt`` exist, their first column (paths relative to
    ``root``) fixes the split; otherwise a seeded stratified split is drawn.
    """
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} is not a directory")
    domain_dirs = sorted(p for p in root.iterdir() if p.is_dir() and p.name != "splits")
    if len(domain_dirs) < 2:
        raise DatasetError(f"need at least 2 domain directories under {root}, found {len(domain_dirs)}")
    classes = sorted({c.name for d in domain_dirs for c in d.iterdir() if c.is_dir()})
    if not classes:
        raise DatasetError(f"no class directories found under {root}")
    class_index = {c: i for i, c in enumerate(classes)}

    images, labels, domains, splits, relpaths = [], [], [], [], []
    rng = np.random.default_rng(seed)
    for d, ddir in enumerate(domain_dirs):
        dom_labels, dom_paths = [], []
        for cname in classes:
            cdir = ddir / cname
            files = sorted(p for p in cdir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES) if cdir.is_dir() else []
            if not files:
                log.warning("domain %s has no samples of class %s", ddir.name, cname)
            for f in files:
                images.append(_read_image(f, image_size))
                dom_labels.append(class_index[cname])
                dom_paths.append(f.relative_to(root).as_posix())
        dom_labels = np.asarray(dom_labels, dtype=np.int64)
        train_file = root / "splits" / f"{ddir.name}_train.txt"
        val_file = root / "splits" / f"{ddir.name}_val.txt"
        if train_file.exists() and val_file.exists():
            val_set = _read_split_file(val_file)
            dom_splits = np.array([VAL if p in val_set else TRAIN for p in dom_paths], dtype=np.int8)
        else:
            dom_splits = stratified_split(dom_labels, val_fraction, rng)
        labels.append(dom_labels)
        domains.append(np.full(len(dom_labels), d, dtype=np.int64))
        splits.append(dom_splits)
        relpaths.extend(dom_paths)

    counts = np.bincount(np.concatenate(labels), minlength=len(classes))
    empty = [classes[c] for c in np.flatnonzero(counts == 0)]
    if empty:
        raise DatasetError(f"classes {empty} have no images in any domain")
    shapes = {im.shape for im in images}
    if len(shapes) > 1:
        raise DatasetError(f"images have mixed shapes {sorted(shapes)}; pass image_size to resize")
    ds = MultiDomainDataset(
        images=np.stack(images).astype(np.float32),
        labels=np.concatenate(labels),
        domains=np.concatenate(domains),
        splits=np.concatenate(splits),
        domain_names=tuple(d.name for d in domain_dirs),
        class_names=tuple(classes),
        source=str(root),
    )
    for problem in ds.check():
        log.warning(problem)
    return ds
