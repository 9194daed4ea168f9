"""Target-domain accuracy, corruption error, embedding export and reports."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch


def accuracy(logits, labels) -> float:
    """Top-1 accuracy in percent."""
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("cannot compute accuracy of an empty set")
    hits = int(np.count_nonzero(np.argmax(logits, axis=1) == labels))
    return 100.0 * hits / labels.size


@torch.no_grad()
def predict(model, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    was_training = model.training
    model.eval()
    dtype = next(model.parameters()).dtype
    out = [
        model(torch.tensor(np.asarray(images[i : i + batch_size]), dtype=dtype)).float().numpy()
        for i in range(0, len(images), batch_size)
    ]
    model.train(was_training)
    return np.concatenate(out) if out else np.zeros((0, model.spec.num_classes), dtype=np.float32)


def _check_classes(model, dataset):
    if model.spec.num_classes != dataset.num_classes:
        raise ValueError(
            f"checkpoint predicts {model.spec.num_classes} classes but the dataset has {dataset.num_classes}"
        )


def evaluate_domain(model, dataset, domain) -> float:
    """Accuracy (%) over every sample of ``domain``, no test-time augmentation."""
    _check_classes(model, dataset)
    idx = dataset.indices([domain])
    return accuracy(predict(model, dataset.images[idx]), dataset.labels[idx])


@dataclass
class CorruptionResult:
    clean_error: float
    errors: dict[str, dict[int, float]]  # kind -> severity -> error %

    @property
    def mean_error(self) -> float:
        cells = [e for sev in self.errors.values() for e in sev.values()]
        return float(np.mean(cells))

    def per_kind(self) -> dict[str, float]:
        return {k: float(np.mean(list(v.values()))) for k, v in self.errors.items()}


def evaluate_corruptions(model, images, labels, kinds, severities=(1, 2, 3, 4, 5), seed: int = 0) -> CorruptionResult:
    """Top-1 error (%) per (kind, severity) on corrupted copies of a clean test set.

    ``kinds`` may include ``"identity"``, which leaves images untouched.
    """
    from .data.corruptions import corrupt_batch

    labels = np.asarray(labels)
    clean = 100.0 - accuracy(predict(model, images), labels)
    errors: dict[str, dict[int, float]] = {}
    for k, kind in enumerate(kinds):
        errors[kind] = {}
        for s in severities:
            if kind == "identity":
                corrupted = images
            else:
                corrupted = corrupt_batch(images, kind, s, seed=(seed, k, s))
            errors[kind][int(s)] = 100.0 - accuracy(predict(model, corrupted), labels)
    return CorruptionResult(clean, errors)


@torch.no_grad()
def export_embeddings(model, dataset, domain, out_dir: str | Path | None = None, batch_size: int = 256):
    """Global-pooled top-level features of every sample in ``domain``.

    Returns ``(matrix, labels, sample_ids)``; with ``out_dir`` also writes
    ``features.f32`` (row-major little-endian float32) and ``features.json``.
    """
    idx = dataset.indices([domain])
    model.eval()
    rows = [
        model.penultimate(torch.as_tensor(dataset.images[idx[i : i + batch_size]])).numpy()
        for i in range(0, len(idx), batch_size)
    ]
    feats = np.concatenate(rows).astype("<f4") if rows else np.zeros((0, 0), "<f4")
    labels = dataset.labels[idx]
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        feats.tofile(out / "features.f32")
        (out / "features.json").write_text(
            json.dumps(
                {
                    "rows": int(feats.shape[0]),
                    "cols": int(feats.shape[1]),
                    "dtype": "float32",
                    "layout": "row-major",
                    "label": labels.tolist(),
                    "class_names": list(dataset.class_names),
                    "domain": dataset.domain_names[dataset.domain_index(domain)],
                    "sample_id": dataset.sample_ids[idx].tolist(),
                }
            )
        )
    return feats, labels, dataset.sample_ids[idx]


def silhouette(features: np.ndarray, labels: np.ndarray) -> float:
    from sklearn.metrics import silhouette_score

    return float(silhouette_score(features, labels))


@dataclass
class EvalReport:
    config_hash: str
    domain_accuracy: dict[str, float] = field(default_factory=dict)
    sample_counts: dict[str, int] = field(default_factory=dict)
    corruption_errors: dict[str, dict[int, float]] | None = None
    clean_error: float | None = None

    @property
    def average_accuracy(self) -> float | None:
        if not self.domain_accuracy:
            return None
        return float(np.mean(list(self.domain_accuracy.values())))

    @property
    def mean_corruption_error(self) -> float | None:
        if not self.corruption_errors:
            return None
        return CorruptionResult(self.clean_error or 0.0, self.corruption_errors).mean_error

    def to_dict(self) -> dict:
        d = asdict(self)
        d["average_accuracy"] = self.average_accuracy
        d["mean_corruption_error"] = self.mean_corruption_error
        return d


def emit_report(report: EvalReport, out_dir: str | Path, plot_data: dict[str, list[dict]] | None = None) -> None:
    """Write ``report.json``, ``report.csv`` and one CSV per entry of ``plot_data``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, pct in list(report.domain_accuracy.items()) + (
        [(f"{k}@{s}", e) for k, v in (report.corruption_errors or {}).items() for s, e in v.items()]
    ):
        if not 0.0 <= pct <= 100.0:
            raise ValueError(f"percentage {name}={pct} outside [0, 100]")
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n")
    with open(out / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["section", "name", "severity", "value", "samples"])
        for dom, acc in report.domain_accuracy.items():
            w.writerow(["accuracy", dom, "", f"{acc:.6f}", report.sample_counts.get(dom, "")])
        if report.average_accuracy is not None:
            w.writerow(["accuracy", "average", "", f"{report.average_accuracy:.6f}", ""])
        if report.corruption_errors:
            w.writerow(["corruption", "clean", "", f"{report.clean_error:.6f}", ""])
            for kind, sev in report.corruption_errors.items():
                for s, e in sev.items():
                    w.writerow(["corruption", kind, s, f"{e:.6f}", ""])
            w.writerow(["corruption", "mean", "", f"{report.mean_corruption_error:.6f}", ""])
    for name, rows in (plot_data or {}).items():
        if not rows:
            continue
        with open(out / f"{name}.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
