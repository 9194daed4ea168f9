"""Experiment configuration: dataclass schema, YAML loading, dotted-key overrides."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator

import yaml


class ConfigError(ValueError):
    """Bad configuration; ``key`` names the offending dotted key path."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


def _f(default, help: str, note: str = "", **kw):
    if isinstance(default, (list, dict, tuple)) and not isinstance(default, str):
        return field(default_factory=lambda: default, metadata={"help": help, "note": note}, **kw)
    return field(default=default, metadata={"help": help, "note": note}, **kw)


@dataclass
class DataConfig:
    root: str | None = _f(None, "folder dataset root (<domain>/<class>/<image>); empty = synthetic benchmark")
    image_size: int = _f(32, "images are resized to image_size x image_size", "32 for Digits-DG, 224 for PACS/Office-Home")
    val_fraction: float = _f(0.1, "per-domain validation fraction when no split files exist")
    split_seed: int = _f(0, "seed for the train/val split and synthetic rendering")
    synth_domains: tuple = _f(
        ("identity", "color_map", "texture", "spectral_noise"), "synthetic domain transforms, one domain each"
    )
    synth_classes: int = _f(5, "synthetic glyph classes")
    synth_per_class: int = _f(200, "synthetic samples per domain and class")
    augment: bool = _f(True, "random resized crop, flip and colour jitter on training images")
    crop_scale: tuple = _f((0.8, 1.0), "random resized crop area range")
    jitter: float = _f(0.4, "brightness/contrast/saturation jitter magnitude")
    flip_p: float = _f(0.5, "horizontal flip probability")


@dataclass
class ModelConfig:
    arch: str = _f("small_convnet", "small_convnet | resnet_style", "small ConvNet for Digits-DG, ResNet for PACS")
    width: int = _f(64, "small_convnet channels per block")
    num_blocks: int = _f(4, "small_convnet blocks (pyramid levels)")
    batchnorm: bool = _f(True, "small_convnet batch normalization after each conv")
    depth: int = _f(18, "resnet_style depth: 18 | 34 | 50")
    fusion_levels: tuple = _f((3, 4), "pyramid levels fused for patch embeddings", "last two levels by default")
    proj_dim: int = _f(128, "patch embedding dimension")
    proj_hidden: int | None = _f(None, "projection hidden width; empty = fused channel count")
    pretrained: str | None = _f(None, "optional encoder state-dict file")


@dataclass
class MethodConfig:
    variant: str = _f(
        "full_phama",
        "baseline_erm | A_apda_only | B_no_momentum | C_o2a_only | D_a2o_only | full_phama",
        "module grid of the ablation table",
    )
    eta: float = _f(1.0, "amplitude mixing scale; lambda ~ U(0, eta)", "1.0 Digits-DG/PACS, 0.2 Office-Home")
    beta: float = _f(0.1, "contrastive loss weight", "0.1 Digits-DG, 0.5 PACS/Office-Home")
    momentum: float = _f(0.9995, "momentum-encoder EMA coefficient", "published default 0.9995")
    tau: float = _f(0.07, "patch contrast temperature", "published default 0.07")
    ramp: bool = _f(True, "sigmoid ramp-up of beta", "on for DG benchmarks, off for corruption robustness")
    ramp_epochs: float = _f(5.0, "length of the beta ramp in epochs", "5 epochs")
    matching: str = _f("patchnce", "patchnce | mse | smooth_l1")
    cross_domain_partners: bool = _f(False, "draw amplitude partners only from other domains")


@dataclass
class OptimConfig:
    lr: float = _f(0.05, "initial SGD step size", "0.05 Digits-DG, 0.001 PACS/Office-Home, 0.1 CIFAR")
    sgd_momentum: float = _f(0.9, "SGD classical momentum", "0.9")
    weight_decay: float = _f(5e-4, "L2 weight decay", "5e-4")
    lr_decay: float = _f(0.1, "step-size decay factor", "0.1")
    decay_every: int | None = _f(20, "decay period in epochs", "20 Digits-DG, 60 CIFAR")
    decay_at_fraction: float | None = _f(None, "single decay at this fraction of epochs (overrides decay_every)", "0.8 PACS")
    epochs: int = _f(50, "training epochs")
    batch_size: int = _f(64, "batch size", "64 DG benchmarks, 128 CIFAR")
    prefetch: bool = _f(False, "prepare the next batch on a worker thread")


@dataclass
class EvalConfig:
    selection: str = _f("train_domain_val", "train_domain_val | last_epoch", "last_epoch for corruption robustness")
    corruptions: tuple = _f(
        ("gaussian_noise", "shot_noise", "defocus_blur", "contrast", "brightness"), "corruption kinds"
    )
    severities: tuple = _f((1, 2, 3, 4, 5), "corruption severities")
    corruption_samples: int | None = _f(None, "cap on clean images used for corruption evaluation")


@dataclass
class ExperimentConfig:
    name: str = _f("phama", "run name")
    target: str = _f("0", "held-out target domain (name or index)")
    seed: int = _f(0, "seed for initialization, data order and augmentation")
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    method: MethodConfig = field(default_factory=MethodConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> "ExperimentConfig":
        from .objective import MATCHING_KINDS, Variant

        m, o = self.method, self.optim
        if m.variant not in Variant.__members__:
            raise ConfigError("method.variant", f"unknown variant {m.variant!r}")
        if not 0.0 <= m.eta <= 1.0:
            raise ConfigError("method.eta", "must lie in [0, 1]")
        if m.beta < 0:
            raise ConfigError("method.beta", "must be nonnegative")
        if not 0.0 <= m.momentum < 1.0:
            raise ConfigError("method.momentum", "must lie in [0, 1)")
        if m.tau <= 0:
            raise ConfigError("method.tau", "must be positive")
        if m.matching not in MATCHING_KINDS:
            raise ConfigError("method.matching", f"choose from {MATCHING_KINDS}")
        for key in ("lr", "epochs", "batch_size"):
            if getattr(o, key) <= 0:
                raise ConfigError(f"optim.{key}", "must be positive")
        if o.weight_decay < 0 or not 0 <= o.sgd_momentum < 1:
            raise ConfigError("optim.weight_decay", "weight decay >= 0 and SGD momentum in [0, 1) required")
        if o.decay_every is not None and o.decay_every <= 0:
            raise ConfigError("optim.decay_every", "must be positive or empty")
        if o.decay_at_fraction is not None and not 0 < o.decay_at_fraction <= 1:
            raise ConfigError("optim.decay_at_fraction", "must lie in (0, 1]")
        if o.batch_size < 2:
            raise ConfigError("optim.batch_size", "amplitude mixing needs batches of at least 2")
        if self.eval.selection not in ("train_domain_val", "last_epoch"):
            raise ConfigError("eval.selection", "choose train_domain_val or last_epoch")
        a, b = self.model.fusion_levels
        if not a < b:
            raise ConfigError("model.fusion_levels", "levels must be distinct and ascending")
        return self


SECTIONS = ("data", "model", "method", "optim", "eval")


def iter_fields(cfg: ExperimentConfig | None = None) -> Iterator[tuple[str, dataclasses.Field, Any]]:
    """Yield ``(dotted_key, field, value)`` for every leaf key."""
    cfg = cfg or ExperimentConfig()
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if f.name in SECTIONS:
            for sub in dataclasses.fields(value):
                yield f"{f.name}.{sub.name}", sub, getattr(value, sub.name)
        else:
            yield f.name, f, value


def _resolve_key(key: str) -> str:
    keys = [k for k, _, _ in iter_fields()]
    if key in keys:
        return key
    matches = [k for k in keys if k.rsplit(".", 1)[-1] == key]
    if len(matches) == 1:
        return matches[0]
    if matches:
        raise ConfigError(key, f"ambiguous key; use one of {matches}")
    raise ConfigError(key, "unknown config key")


def _coerce(key: str, f: dataclasses.Field, value: Any):
    default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
    if value is None or value == "":
        if default is None or "None" in str(f.type):
            return None
        raise ConfigError(key, "value required")
    if isinstance(default, tuple):
        if isinstance(value, str):
            value = [v.strip() for v in value.split(",") if v.strip()]
            value = [yaml.safe_load(v) for v in value]
        if not isinstance(value, (list, tuple)):
            raise ConfigError(key, f"expected a list, got {value!r}")
        return tuple(value)
    typ = str(f.type)
    try:
        if isinstance(default, bool) or typ.startswith("bool"):
            if isinstance(value, str):
                low = value.lower()
                if low not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(value)
                return low in ("true", "1", "yes")
            return bool(value)
        if typ.startswith("int"):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if typ.startswith("float"):
            return float(value)
        if typ.startswith("str"):
            return str(value)
    except (TypeError, ValueError):
        raise ConfigError(key, f"cannot interpret {value!r} as {typ}") from None
    return value


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict) and k in SECTIONS and not prefix:
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def set_key(cfg: ExperimentConfig, key: str, value: Any) -> ExperimentConfig:
    """Return a copy of ``cfg`` with one (possibly abbreviated) dotted key replaced."""
    full = _resolve_key(key)
    fields = {k: f for k, f, _ in iter_fields(cfg)}
    value = _coerce(full, fields[full], value)
    if "." in full:
        section, leaf = full.split(".", 1)
        sub = dataclasses.replace(getattr(cfg, section), **{leaf: value})
        return dataclasses.replace(cfg, **{section: sub})
    return dataclasses.replace(cfg, **{full: value})


def from_dict(d: dict, base: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = base or ExperimentConfig()
    for key, value in _flatten(d or {}).items():
        cfg = set_key(cfg, key, value)
    return cfg


def apply_overrides(cfg: ExperimentConfig, overrides: list[str]) -> ExperimentConfig:
    """Apply ``key=value`` strings; values are parsed as YAML scalars or lists."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(item, "override must look like key=value")
        key, raw = item.split("=", 1)
        try:
            value = yaml.safe_load(raw) if raw.strip() else None
        except yaml.YAMLError:
            value = raw
        cfg = set_key(cfg, key.strip(), value)
    return cfg


def load_config(path: str | Path | None, overrides: list[str] = (), preset: str | None = None) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if preset:
        cfg = from_dict(PRESETS[preset], cfg)
    if path is not None:
        try:
            raw = yaml.safe_load(Path(path).read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(str(path), f"not valid YAML: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(str(path), "config file must be a key-value mapping")
        cfg = from_dict(raw, cfg)
    return apply_overrides(cfg, list(overrides)).validate()


def to_dict(cfg: ExperimentConfig) -> dict:
    return json.loads(json.dumps(dataclasses.asdict(cfg)))


def config_json(cfg: ExperimentConfig) -> str:
    return json.dumps(to_dict(cfg), indent=1, sort_keys=True) + "\n"


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(config_json(cfg).encode()).hexdigest()[:16]


def describe_keys() -> str:
    """One line per config key: default, help and, where known, the reported setting."""
    lines = []
    for key, f, value in iter_fields():
        note = f.metadata.get("note", "")
        shown = "" if value is None else (",".join(map(str, value)) if isinstance(value, tuple) else value)
        line = f"  {key} = {shown}    {f.metadata.get('help', '')}"
        if note:
            line += f" [reported: {note}]"
        lines.append(line)
    return "\n".join(lines)


PRESETS: dict[str, dict] = {
    "digits_dg": {
        "data": {"image_size": 32},
        "model": {"arch": "small_convnet"},
        "method": {"eta": 1.0, "beta": 0.1, "momentum": 0.9995, "tau": 0.07, "ramp": True},
        "optim": {"lr": 0.05, "decay_every": 20, "batch_size": 64, "weight_decay": 5e-4},
    },
    "pacs": {
        "data": {"image_size": 224},
        "model": {"arch": "resnet_style", "depth": 18},
        "method": {"eta": 1.0, "beta": 0.5},
        "optim": {"lr": 0.001, "epochs": 50, "decay_every": None, "decay_at_fraction": 0.8, "batch_size": 64},
    },
    "office_home": {
        "data": {"image_size": 224},
        "model": {"arch": "resnet_style", "depth": 18},
        "method": {"eta": 0.2, "beta": 0.5},
        "optim": {"lr": 0.001, "epochs": 50, "decay_every": None, "decay_at_fraction": 0.8, "batch_size": 64},
    },
    "cifar_robustness": {
        "data": {"image_size": 32, "jitter": 0.0},
        "method": {"ramp": False},
        "optim": {"lr": 0.1, "decay_every": 60, "epochs": 200, "batch_size": 128},
        "eval": {"selection": "last_epoch"},
    },
}
