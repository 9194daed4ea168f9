"""Desk-scale leave-one-domain-out comparison of method variants.

Trains every (variant, target, seed) combination on the synthetic benchmark
and reports target accuracy plus corruption error on the pooled source
validation images, which serve as the clean in-distribution test set.
"""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import config as C
from .data import VAL
from .evaluation import evaluate_corruptions, evaluate_domain
from .trainer import build_dataset, train

log = logging.getLogger(__name__)

DESK_OVERRIDES = {
    "data": {"synth_domains": ["identity", "color_map", "texture", "spectral_noise"], "synth_classes": 5, "synth_per_class": 200},
    "model": {"arch": "small_convnet", "width": 32},
    "method": {"eta": 1.0, "beta": 0.1, "tau": 0.07, "momentum": 0.99, "ramp_epochs": 1.0},
    "optim": {"epochs": 4, "lr": 0.05, "decay_every": 3, "batch_size": 64},
    "eval": {"selection": "train_domain_val", "corruption_samples": 200},
}


def desk_config(**overrides) -> C.ExperimentConfig:
    cfg = C.from_dict(DESK_OVERRIDES)
    for k, v in overrides.items():
        cfg = C.set_key(cfg, k, v)
    return cfg.validate()


@dataclass
class DeskRun:
    variant: str
    target: str
    seed: int
    accuracy: float
    mean_corruption_error: float | None
    clean_error: float | None
    seconds: float


@dataclass
class DeskResults:
    runs: list[DeskRun] = field(default_factory=list)

    def mean_accuracy(self, variant: str) -> float:
        return float(np.mean([r.accuracy for r in self.runs if r.variant == variant]))

    def mean_corruption_error(self, variant: str) -> float:
        return float(np.mean([r.mean_corruption_error for r in self.runs if r.variant == variant]))

    def seed_means(self, variant: str, attr: str = "accuracy") -> dict[int, float]:
        seeds = sorted({r.seed for r in self.runs if r.variant == variant})
        return {
            s: float(np.mean([getattr(r, attr) for r in self.runs if r.variant == variant and r.seed == s]))
            for s in seeds
        }

    def write(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["variant", "target", "seed", "accuracy", "mean_corruption_error", "clean_error", "seconds"])
            for r in self.runs:
                w.writerow([r.variant, r.target, r.seed, f"{r.accuracy:.4f}",
                            "" if r.mean_corruption_error is None else f"{r.mean_corruption_error:.4f}",
                            "" if r.clean_error is None else f"{r.clean_error:.4f}", f"{r.seconds:.1f}"])


def run_desk_experiment(
    base: C.ExperimentConfig | None = None,
    variants=("baseline_erm", "A_apda_only", "full_phama"),
    targets=None,
    seeds=(0, 1, 2),
    corruption_variants=("baseline_erm", "full_phama"),
    progress=None,
) -> DeskResults:
    base = base or desk_config()
    dataset = build_dataset(base)
    targets = list(targets) if targets is not None else list(dataset.domain_names)
    results = DeskResults()
    for seed in seeds:
        for target in targets:
            for variant in variants:
                cfg = C.set_key(C.set_key(C.set_key(base, "variant", variant), "target", target), "seed", seed)
                t0 = time.time()
                res = train(cfg, dataset)
                model = res.selected_model()
                acc = evaluate_domain(model, dataset, res.target)
                mce = clean = None
                if variant in corruption_variants:
                    sources = [d for d in range(dataset.num_domains) if d != res.target]
                    idx = dataset.indices(sources, VAL)
                    cap = cfg.eval.corruption_samples
                    if cap is not None and idx.size > cap:
                        idx = np.random.default_rng((seed, 5)).choice(idx, cap, replace=False)
                    cr = evaluate_corruptions(
                        model, dataset.images[idx], dataset.labels[idx], cfg.eval.corruptions, cfg.eval.severities, seed
                    )
                    mce, clean = cr.mean_error, cr.clean_error
                run = DeskRun(variant, dataset.domain_names[res.target], seed, acc, mce, clean, time.time() - t0)
                results.runs.append(run)
                msg = f"{variant:14s} target={run.target:15s} seed={seed} acc={acc:6.2f} mce={mce} ({run.seconds:.0f}s)"
                log.info(msg)
                if progress:
                    progress(msg)
    return results
