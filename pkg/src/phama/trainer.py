"""Leave-one-domain-out training loop, step-size schedule and model selection."""
from __future__ import annotations

import copy
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import config as C
from .data import TRAIN, VAL, AugmentParams, MultiDomainDataset, SynthSpec, apda_arrays, standard_augment
from .data import load_folder_dataset, synth_domains
from .evaluation import accuracy, predict
from .models import EncoderSpec, PhaMaNet, load_pretrained, save_checkpoint
from .objective import Variant, beta_schedule, ema_update, init_momentum, phama_loss

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, epoch: int, record: dict):
        super().__init__(f"non-finite loss at step {step} (epoch {epoch}): {record}")
        self.step, self.epoch, self.record = step, epoch, record


def build_dataset(cfg: C.ExperimentConfig) -> MultiDomainDataset:
    d = cfg.data
    if d.root:
        return load_folder_dataset(d.root, d.image_size, d.val_fraction, d.split_seed)
    spec = SynthSpec(tuple(d.synth_domains), d.synth_classes, d.synth_per_class, d.image_size, d.val_fraction)
    return synth_domains(spec, seed=d.split_seed)


def encoder_spec(cfg: C.ExperimentConfig, dataset: MultiDomainDataset) -> EncoderSpec:
    m = cfg.model
    c, h, _ = dataset.image_shape
    return EncoderSpec(
        arch=m.arch,
        num_classes=dataset.num_classes,
        input_size=h,
        in_channels=c,
        width=m.width,
        num_blocks=m.num_blocks,
        batchnorm=m.batchnorm,
        depth=m.depth,
        fusion_levels=tuple(m.fusion_levels),
        proj_dim=m.proj_dim,
        proj_hidden=m.proj_hidden,
    )


def step_size(o: C.OptimConfig, epoch: int) -> float:
    """Stepwise decay: ``lr * decay^floor(epoch / period)``, or a single decay at a fraction of training."""
    if o.decay_at_fraction is not None:
        return o.lr * (o.lr_decay if epoch >= int(round(o.decay_at_fraction * o.epochs)) else 1.0)
    if o.decay_every:
        return o.lr * o.lr_decay ** (epoch // o.decay_every)
    return o.lr


def select_model(history: list[float], rule: str = "train_domain_val") -> int:
    """Index of the chosen epoch: earliest argmax of validation accuracy, or the last epoch."""
    if not history:
        raise ValueError("no recorded epochs to select from")
    if rule == "last_epoch":
        return len(history) - 1
    if rule == "train_domain_val":
        return int(np.argmax(history))
    raise ValueError(f"unknown selection rule {rule!r}")


@dataclass
class TrainResult:
    config: C.ExperimentConfig
    dataset: MultiDomainDataset
    target: int
    model: PhaMaNet  # last-epoch weights
    best_state: dict
    history: list[dict]
    selected_epoch: int
    seen_sample_ids: set = field(default_factory=set)
    out_dir: Path | None = None

    def selected_model(self) -> PhaMaNet:
        if self.selected_epoch == len(self.history) - 1:
            return self.model
        model = PhaMaNet(self.model.spec)
        model.load_state_dict(self.best_state)
        return model.eval()


def _augment_params(d: C.DataConfig) -> AugmentParams:
    return AugmentParams(
        crop_scale=tuple(d.crop_scale), flip_p=d.flip_p, brightness=d.jitter, contrast=d.jitter, saturation=d.jitter
    )


def _batches(order: np.ndarray, batch_size: int) -> list[np.ndarray]:
    chunks = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    # amplitude mixing needs two images; a trailing singleton is dropped
    return [c for c in chunks if len(c) >= 2]


class _Run:
    """Mutable state of one training run."""

    def __init__(self, cfg, dataset, target, log_fh):
        self.cfg, self.dataset, self.target, self.log_fh = cfg, dataset, target, log_fh
        self.variant = Variant(cfg.method.variant)
        self.aug = _augment_params(cfg.data)
        sources = [d for d in range(dataset.num_domains) if d != target]
        self.train_idx = dataset.indices(sources, TRAIN)
        self.val_idx = dataset.indices(sources, VAL)
        if self.train_idx.size < 2:
            raise ValueError("fewer than 2 training samples in the source domains")
        torch.manual_seed(cfg.seed)
        self.model = PhaMaNet(encoder_spec(cfg, dataset))
        if cfg.model.pretrained:
            load_pretrained(self.model, cfg.model.pretrained)
        self.momentum = None
        if self.variant.momentum_encoder:
            self.momentum = copy.deepcopy(self.model)
            init_momentum(self.momentum, self.model)
            self.momentum.eval()
        o = cfg.optim
        self.opt = torch.optim.SGD(
            self.model.parameters(), lr=o.lr, momentum=o.sgd_momentum, weight_decay=o.weight_decay
        )
        self.step = 0
        self.seen: set[int] = set()

    def prepare(self, epoch: int, b: int, idx: np.ndarray):
        ds, cfg = self.dataset, self.cfg
        if np.any(ds.domains[idx] == self.target):
            raise RuntimeError("target-domain sample scheduled for training")
        images = ds.images[idx]
        if cfg.data.augment:
            images = np.stack(
                [standard_augment(images[k], (cfg.seed, epoch, int(ds.sample_ids[i])), self.aug) for k, i in enumerate(idx)]
            )
        else:
            images = np.array(images, dtype=np.float32)
        if self.variant.apda:
            augmented, *_ = apda_arrays(
                images, cfg.method.eta, (cfg.seed, epoch, b, 7), ds.domains[idx], cfg.method.cross_domain_partners
            )
        else:
            augmented = images
        return idx, torch.from_numpy(images), torch.from_numpy(augmented), torch.from_numpy(ds.labels[idx])

    def train_step(self, epoch_progress: float, epoch: int, batch) -> dict:
        idx, x_o, x_a, y = batch
        m = self.cfg.method
        beta = beta_schedule(epoch_progress, m.beta, m.ramp_epochs, m.ramp) if self.variant.contrastive else 0.0
        self.model.train()
        out = phama_loss(self.model, self.momentum, x_o, x_a, y, beta, self.variant, m.matching, m.tau)
        record = {"step": self.step, "epoch": epoch, **out.record(), "lr": self.opt.param_groups[0]["lr"]}
        if not math.isfinite(record["total"]):
            self._log(record | {"diverged": True})
            raise TrainingDiverged(self.step, epoch, record)
        self.opt.zero_grad(set_to_none=True)
        out.total.backward()
        self.opt.step()
        if self.momentum is not None:
            ema_update(self.momentum, self.model, m.momentum)
        self.seen.update(int(s) for s in self.dataset.sample_ids[idx])
        self.step += 1
        self._log(record)
        return record

    def _log(self, record):
        if self.log_fh is not None:
            self.log_fh.write(json.dumps(record) + "\n")

    def validate(self) -> float:
        if self.val_idx.size == 0:
            return float("nan")
        logits = predict(self.model, self.dataset.images[self.val_idx])
        return accuracy(logits, self.dataset.labels[self.val_idx])


def train(
    cfg: C.ExperimentConfig,
    dataset: MultiDomainDataset | None = None,
    out_dir: str | Path | None = None,
) -> TrainResult:
    """Train on every source domain's train split, holding out ``cfg.target``.

    Per batch: standard augmentation, amplitude perturbation, the variant's
    loss, one SGD step, then the momentum-encoder update.  Validation accuracy
    on the pooled source validation splits is recorded after each epoch.
    """
    cfg = cfg.validate()
    dataset = dataset if dataset is not None else build_dataset(cfg)
    target = dataset.domain_index(cfg.target)
    out = Path(out_dir) if out_dir is not None else None
    log_fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config_resolved.json").write_text(C.config_json(cfg))
        log_fh = open(out / "train_log.jsonl", "w")
    try:
        run = _Run(cfg, dataset, target, log_fh)
        history, best_acc, best_state = [], -math.inf, None
        o = cfg.optim
        pool = ThreadPoolExecutor(max_workers=1) if o.prefetch else None
        for epoch in range(o.epochs):
            lr = step_size(o, epoch)
            for group in run.opt.param_groups:
                group["lr"] = lr
            order = np.random.default_rng((cfg.seed, epoch, 11)).permutation(run.train_idx)
            chunks = _batches(order, o.batch_size)
            pending = pool.submit(run.prepare, epoch, 0, chunks[0]) if pool else None
            losses = []
            for b, idx in enumerate(chunks):
                if pool:
                    batch = pending.result()
                    if b + 1 < len(chunks):
                        pending = pool.submit(run.prepare, epoch, b + 1, chunks[b + 1])
                else:
                    batch = run.prepare(epoch, b, idx)
                rec = run.train_step(epoch + b / len(chunks), epoch, batch)
                losses.append(rec["total"])
            val_acc = run.validate()
            history.append({"epoch": epoch, "lr": lr, "train_loss": float(np.mean(losses)), "val_acc": val_acc})
            log.info("epoch %d lr %.4g loss %.4f val %.2f", epoch, lr, history[-1]["train_loss"], val_acc)
            score = -math.inf if math.isnan(val_acc) else val_acc
            if best_state is None or score > best_acc:
                best_acc, best_state = score, copy.deepcopy(run.model.state_dict())
        if pool:
            pool.shutdown()
    finally:
        if log_fh is not None:
            log_fh.close()

    val_curve = [h["val_acc"] if not math.isnan(h["val_acc"]) else -math.inf for h in history]
    selected = select_model(val_curve, cfg.eval.selection)
    run.model.eval()
    result = TrainResult(cfg, dataset, target, run.model, best_state, history, selected, run.seen, out)
    if out is not None:
        manifest = {
            "config": C.to_dict(cfg),
            "config_hash": C.config_hash(cfg),
            "history": history,
            "domain_names": list(dataset.domain_names),
            "class_names": list(dataset.class_names),
            "target": dataset.domain_names[target],
        }
        save_checkpoint(out / "last.ckpt", run.model, manifest | {"epoch": len(history) - 1})
        save_checkpoint(out / "best.ckpt", result.selected_model(), manifest | {"epoch": selected})
    return result
