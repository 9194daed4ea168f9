"""Command-line entry point.

Exit status is 0 on success, 2 for a bad configuration (the offending key
path is reported) and 1 for runtime failures.  Failures print a single JSON
line on stderr, e.g. ``{"error": "data", "message": "..."}``.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import config as C

OUTPUT_ROOT_ENV = "PHAMA_OUTPUT_ROOT"
log = logging.getLogger("phama")


class CliError(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


def _output_dir(args, default_name: str) -> Path:
    if args.out:
        out = Path(args.out)
    else:
        out = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / default_name
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resolve_config(args, data: str | None = None) -> C.ExperimentConfig:
    cfg = C.load_config(getattr(args, "config", None), getattr(args, "set", None) or [], getattr(args, "preset", None))
    if getattr(args, "seed", None) is not None:
        cfg = C.set_key(cfg, "seed", args.seed)
    if getattr(args, "target", None) is not None:
        cfg = C.set_key(cfg, "target", args.target)
    if data is not None and data != "synth":
        cfg = C.set_key(cfg, "data.root", data)
    return cfg.validate()


def _write_resolved(out: Path, payload) -> None:
    text = C.config_json(payload) if isinstance(payload, C.ExperimentConfig) else json.dumps(payload, indent=1, sort_keys=True) + "\n"
    (out / "config_resolved.json").write_text(text)


def _dataset(cfg):
    from .trainer import build_dataset

    return build_dataset(cfg)


# ---- subcommands ------------------------------------------------------------


def cmd_train(args) -> None:
    from .evaluation import EvalReport, emit_report, evaluate_domain
    from .trainer import train

    cfg = _resolve_config(args)
    out = _output_dir(args, f"{cfg.name}-{C.config_hash(cfg)}")
    dataset = _dataset(cfg)
    result = train(cfg, dataset, out)
    target = dataset.domain_names[result.target]
    acc = evaluate_domain(result.selected_model(), dataset, result.target)
    report = EvalReport(C.config_hash(cfg), {target: acc}, {target: int(dataset.indices([target]).size)})
    curve = [{"epoch": h["epoch"], "lr": h["lr"], "train_loss": h["train_loss"], "val_acc": h["val_acc"]} for h in result.history]
    emit_report(report, out, {"training_curve": curve})
    print(json.dumps({"out": str(out), "target": target, "accuracy": acc, "selected_epoch": result.selected_epoch}))


def cmd_eval(args) -> None:
    from .data import VAL
    from .evaluation import EvalReport, emit_report, evaluate_corruptions, evaluate_domain, export_embeddings
    from .models import load_checkpoint

    model, manifest = load_checkpoint(args.checkpoint)
    cfg = C.from_dict(manifest.get("config", {}))
    cfg = C.apply_overrides(cfg, args.set or [])
    if args.seed is not None:
        cfg = C.set_key(cfg, "seed", args.seed)
    if args.data != "synth":
        cfg = C.set_key(cfg, "data.root", args.data)
    cfg = C.set_key(cfg, "target", args.target if args.target is not None else manifest.get("target", cfg.target))
    cfg = cfg.validate()
    dataset = _dataset(cfg)
    target = dataset.domain_names[dataset.domain_index(cfg.target)]
    out = _output_dir(args, f"eval-{C.config_hash(cfg)}")
    _write_resolved(out, cfg)

    report = EvalReport(C.config_hash(cfg))
    report.domain_accuracy[target] = evaluate_domain(model, dataset, target)
    report.sample_counts[target] = int(dataset.indices([target]).size)
    plots = {}
    if args.corruptions:
        idx = dataset.indices([target])
        cap = cfg.eval.corruption_samples
        if cap is not None and idx.size > cap:
            idx = np.sort(np.random.default_rng((cfg.seed, 5)).choice(idx, cap, replace=False))
        res = evaluate_corruptions(
            model, dataset.images[idx], dataset.labels[idx], cfg.eval.corruptions, cfg.eval.severities, cfg.seed
        )
        report.corruption_errors, report.clean_error = res.errors, res.clean_error
        plots["corruption_curve"] = [
            {"kind": k, "severity": s, "error": e} for k, sev in res.errors.items() for s, e in sev.items()
        ]
    if args.embeddings:
        export_embeddings(model, dataset, target, out / "embeddings")
    emit_report(report, out, plots)
    print(json.dumps({"out": str(out)} | report.to_dict()))


def cmd_ablate(args) -> None:
    from .ablation import run_ablation_grid

    cfg = _resolve_config(args)
    out = _output_dir(args, f"ablate-{C.config_hash(cfg)}")
    _write_resolved(out, cfg)
    dataset = _dataset(cfg)
    if args.targets == "all":
        targets = list(dataset.domain_names)
    elif args.targets:
        targets = [t.strip() for t in args.targets.split(",") if t.strip()]
    else:
        targets = [cfg.target]
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [cfg.seed]
    runs, summary = run_ablation_grid(cfg, args.grid, seeds, targets, out, dataset)
    beta_rows = [r for r in summary if r["grid"] == "beta" and r["target"] == "mean"]
    if beta_rows:
        from .evaluation import emit_report, EvalReport

        emit_report(EvalReport(C.config_hash(cfg)), out, {"beta_curve": beta_rows})
    print(json.dumps({"out": str(out), "runs": len(runs), "cells": len(summary)}))


def cmd_analyze_spectra(args) -> None:
    from .spectral import audit_dataset

    cfg = _resolve_config(args, data=args.data)
    out = _output_dir(args, f"spectra-{C.config_hash(cfg)}")
    _write_resolved(out, {"experiment": C.to_dict(cfg), "per_domain": args.per_domain, "keep_fraction": args.keep_fraction})
    dataset = _dataset(cfg)
    audit = audit_dataset(dataset, args.per_domain, args.keep_fraction, cfg.seed)
    audit.write(out)
    summary = {
        d: {
            "n": int(audit.domain_values(d).size),
            "f_c_mean": float(np.mean(audit.domain_values(d, "centroid_frequency"))),
            "f_std_mean": float(np.mean(audit.domain_values(d))),
        }
        for d in dataset.domain_names
    }
    print(json.dumps({"out": str(out), "domains": summary}))


def _read_png(path: Path) -> np.ndarray:
    from PIL import Image

    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    except (OSError, ValueError) as exc:
        raise CliError("io", f"cannot read image {path}: {exc}") from None
    return arr.transpose(2, 0, 1)


def _write_png(path: Path, image: np.ndarray) -> None:
    from PIL import Image

    px = np.clip(np.rint(np.asarray(image).transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(px).save(path)


def cmd_reconstruct(args) -> None:
    from . import fourier

    src = Path(args.image)
    image = _read_png(src)
    out = _output_dir(args, "reconstruct")
    info = {"image": str(src), "mode": args.mode}
    if args.mode == "phase-only":
        result = fourier.phase_only(image)
    elif args.mode == "amplitude-only":
        result = fourier.amplitude_only(image)
    else:
        if not args.partner:
            raise CliError("data", "--mode swap needs --partner")
        partner = _read_png(Path(args.partner))
        p_img, p_par = fourier.to_polar(fourier.fft2(image)), fourier.to_polar(fourier.fft2(partner))
        rec = fourier.reconstruct_with(fourier.mix_amplitude(p_img.amplitude, p_par.amplitude, args.lam), p_img.phase)
        result = rec.image
        info |= {"partner": args.partner, "lam": args.lam, "overflow_fraction": rec.overflow_fraction}
    dest = out / f"{src.stem}.{args.mode.replace('-', '_')}.png"
    _write_png(dest, result)
    _write_resolved(out, info)
    print(json.dumps(info | {"written": str(dest)}))


def cmd_data(args) -> None:
    cfg = _resolve_config(args, data=args.data)
    info = _dataset(cfg).describe()
    if args.out:
        out = _output_dir(args, "describe")
        _write_resolved(out, cfg)
        (out / "describe.json").write_text(json.dumps(info, indent=1) + "\n")
    print(json.dumps(info, indent=1))


# ---- parser -----------------------------------------------------------------


def _config_args(p, target=True):
    p.add_argument("--config", help="YAML file of config keys (nested sections or dotted keys)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key; repeatable")
    p.add_argument("--preset", choices=sorted(C.PRESETS), help="start from a named benchmark preset")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--out", help=f"output directory (default: ${OUTPUT_ROOT_ENV}/<run>, else ./runs/<run>)")
    if target:
        p.add_argument("--target", help="held-out target domain (name or index)")


def build_parser() -> argparse.ArgumentParser:
    keys = "config keys (default, description):\n" + C.describe_keys()
    fmt = argparse.RawDescriptionHelpFormatter
    parser = argparse.ArgumentParser(prog="phama", description=__doc__, epilog=keys, formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one leave-one-domain-out run", epilog=keys, formatter_class=fmt)
    _config_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a target domain", epilog=keys, formatter_class=fmt)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", default="synth", help="dataset root, or 'synth' to rebuild the checkpoint's synthetic data")
    p.add_argument("--target", help="domain to evaluate (default: the checkpoint's held-out domain)")
    p.add_argument("--corruptions", action="store_true", help="also report corruption errors")
    p.add_argument("--embeddings", action="store_true", help="also export penultimate features")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run ablation grids", epilog=keys, formatter_class=fmt)
    _config_args(p)
    p.add_argument("--grid", action="append", choices=["table5", "table6", "beta", "fusion", "all"], required=True)
    p.add_argument("--seeds", help="comma-separated seeds (default: the config seed)")
    p.add_argument("--targets", help="comma-separated target domains, or 'all' (default: the config target)")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("analyze-spectra", help="per-sample spectral statistics and amplitude embeddings")
    _config_args(p, target=False)
    p.add_argument("--data", default="synth", help="dataset root or 'synth'")
    p.add_argument("--per-domain", type=int, default=1500)
    p.add_argument("--keep-fraction", type=float, default=0.25)
    p.set_defaults(func=cmd_analyze_spectra)

    p = sub.add_parser("reconstruct", help="phase-only, amplitude-only or amplitude-swapped image")
    p.add_argument("--image", required=True)
    p.add_argument("--mode", choices=["phase-only", "amplitude-only", "swap"], required=True)
    p.add_argument("--partner", help="amplitude donor for --mode swap")
    p.add_argument("--lam", type=float, default=1.0, help="mixing weight for --mode swap")
    p.add_argument("--out")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("data", help="dataset utilities")
    dsub = p.add_subparsers(dest="data_command", required=True)
    d = dsub.add_parser("describe", help="print domain/class/sample counts as JSON")
    _config_args(d, target=False)
    d.add_argument("--data", default="synth", help="dataset root or 'synth'")
    d.set_defaults(func=cmd_data)
    return parser


def _fail(category: str, message: str, code: int, **extra) -> int:
    print(json.dumps({"error": category, "message": " ".join(str(message).split())} | extra), file=sys.stderr)
    return code


def main(argv=None) -> int:
    from .data import DatasetError
    from .fourier import SpectrumError
    from .models import DegenerateEmbedding
    from .spectral import UndefinedStatistic
    from .trainer import TrainingDiverged

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except C.ConfigError as exc:
        return _fail("config", exc, 2, key=exc.key)
    except CliError as exc:
        return _fail(exc.category, exc, 1)
    except (TrainingDiverged, SpectrumError, DegenerateEmbedding, UndefinedStatistic, FloatingPointError) as exc:
        return _fail("numeric", exc, 1)
    except (DatasetError, ValueError) as exc:
        return _fail("data", exc, 1)
    except OSError as exc:
        return _fail("io", exc, 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
