"""Ablation grids: module variants, matching-loss kinds, contrastive weight, fusion levels."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import config as C
from .evaluation import evaluate_domain
from .trainer import TrainingDiverged, build_dataset, train

log = logging.getLogger(__name__)

GRIDS: dict[str, tuple[str, tuple]] = {
    "table5": (
        "method.variant",
        ("baseline_erm", "A_apda_only", "B_no_momentum", "C_o2a_only", "D_a2o_only", "full_phama"),
    ),
    "table6": ("method.matching", ("smooth_l1", "mse", "patchnce")),
    "beta": ("method.beta", (0.1, 0.5, 1.0, 2.0, 5.0)),
    "fusion": ("model.fusion_levels", ((1, 2), (2, 3), (3, 4))),
}


def resolve_grids(names) -> list[str]:
    if isinstance(names, str):
        names = [names]
    out = []
    for n in names:
        if n == "all":
            out.extend(GRIDS)
        elif n in GRIDS:
            out.append(n)
        else:
            raise ValueError(f"unknown grid {n!r}; choose from {sorted(GRIDS)} or 'all'")
    return list(dict.fromkeys(out))


@dataclass
class CellRun:
    grid: str
    key: str
    value: str
    target: str
    seed: int
    accuracy: float | None
    status: str  # ok | collapsed | failed
    message: str = ""


def _fmt(value) -> str:
    return "-".join(map(str, value)) if isinstance(value, (tuple, list)) else str(value)


def run_ablation_grid(
    base: C.ExperimentConfig,
    grids=("table5",),
    seeds=(0,),
    targets=None,
    out_dir: str | Path | None = None,
    dataset=None,
) -> tuple[list[CellRun], list[dict]]:
    """Train and evaluate every (grid cell, target, seed) combination.

    A run whose loss turns non-finite is recorded as ``collapsed``; any other
    exception is recorded as ``failed``; the grid always continues.  Returns
    the per-run records and the per-cell summary rows (mean/std over seeds).
    """
    if not seeds:
        raise ValueError("at least one seed is required")
    dataset = dataset if dataset is not None else build_dataset(base)
    targets = list(targets) if targets is not None else [base.target]
    runs: list[CellRun] = []
    for grid in resolve_grids(grids):
        key, values = GRIDS[grid]
        for value in values:
            for target in targets:
                for seed in seeds:
                    cfg = C.set_key(base, key, list(value) if isinstance(value, tuple) else value)
                    cfg = C.set_key(C.set_key(cfg, "target", str(target)), "seed", seed)
                    tname = dataset.domain_names[dataset.domain_index(str(target))]
                    try:
                        result = train(cfg, dataset)
                        acc = evaluate_domain(result.selected_model(), dataset, result.target)
                        runs.append(CellRun(grid, key, _fmt(value), tname, seed, acc, "ok"))
                    except TrainingDiverged as exc:
                        runs.append(CellRun(grid, key, _fmt(value), tname, seed, None, "collapsed", str(exc)))
                    except Exception as exc:  # the grid must survive any single cell
                        log.exception("cell %s=%s target %s seed %s failed", key, value, target, seed)
                        runs.append(CellRun(grid, key, _fmt(value), tname, seed, None, "failed", repr(exc)))
                    log.info("%s %s=%s target=%s seed=%s -> %s", grid, key, value, tname, seed, runs[-1].status)
    summary = summarize(runs)
    if out_dir is not None:
        write_ablation(runs, summary, out_dir)
    return runs, summary


def summarize(runs: list[CellRun]) -> list[dict]:
    """Mean and std over seeds for every (cell, target), plus a ``mean`` target row.

    The ``mean`` row averages over targets within each seed first, so its std
    is a spread over seeds; a seed contributes only if all its targets succeeded.
    """
    cells: dict[tuple, list[CellRun]] = {}
    for r in runs:
        cells.setdefault((r.grid, r.key, r.value, r.target), []).append(r)
        cells.setdefault((r.grid, r.key, r.value, "mean"), []).append(r)
    rows = []
    for (grid, key, value, target), rs in cells.items():
        if target == "mean":
            by_seed: dict[int, list[CellRun]] = {}
            for r in rs:
                by_seed.setdefault(r.seed, []).append(r)
            accs = [
                float(np.mean([r.accuracy for r in group]))
                for group in by_seed.values()
                if all(r.status == "ok" for r in group)
            ]
        else:
            accs = [r.accuracy for r in rs if r.status == "ok"]
        rows.append(
            {
                "grid": grid,
                "key": key,
                "value": value,
                "target": target,
                "runs": len(rs),
                "ok": sum(r.status == "ok" for r in rs),
                "collapsed": sum(r.status == "collapsed" for r in rs),
                "failed": sum(r.status == "failed" for r in rs),
                "mean": f"{np.mean(accs):.4f}" if accs else "",
                "std": f"{np.std(accs):.4f}" if accs else "",
            }
        )
    return rows


def write_ablation(runs: list[CellRun], summary: list[dict], out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "ablation_runs.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["grid", "key", "value", "target", "seed", "accuracy", "status", "message"])
        for r in runs:
            acc = "" if r.accuracy is None else f"{r.accuracy:.4f}"
            w.writerow([r.grid, r.key, r.value, r.target, r.seed, acc, r.status, r.message])
    if summary:
        with open(out / "ablation.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(summary[0]))
            w.writeheader()
            w.writerows(summary)
