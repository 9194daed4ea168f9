"""Classification, patch-matching and cross-contrastive losses, the contrastive
weight ramp, and exponential-moving-average parameter updates."""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import torch
import torch.nn as nn
import torch.nn.functional as F

MATCHING_KINDS = ("patchnce", "mse", "smooth_l1")


class Variant(str, Enum):
    """Which components of the method are active."""

    baseline_erm = "baseline_erm"
    A_apda_only = "A_apda_only"
    B_no_momentum = "B_no_momentum"
    C_o2a_only = "C_o2a_only"
    D_a2o_only = "D_a2o_only"
    full_phama = "full_phama"

    @property
    def apda(self) -> bool:
        return self is not Variant.baseline_erm

    @property
    def o2a(self) -> bool:
        return self in (Variant.B_no_momentum, Variant.C_o2a_only, Variant.full_phama)

    @property
    def a2o(self) -> bool:
        return self in (Variant.B_no_momentum, Variant.D_a2o_only, Variant.full_phama)

    @property
    def momentum_encoder(self) -> bool:
        return self in (Variant.C_o2a_only, Variant.D_a2o_only, Variant.full_phama)

    @property
    def contrastive(self) -> bool:
        return self.o2a or self.a2o


def cross_entropy(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    return F.cross_entropy(logits, labels)


def _as_batch(x: torch.Tensor) -> torch.Tensor:
    return x.unsqueeze(0) if x.dim() == 2 else x


def patchnce(anchor: torch.Tensor, target: torch.Tensor, tau: float = 0.07) -> torch.Tensor:
    """Patchwise InfoNCE.

    ``anchor`` and ``target`` are ``(P, D)`` or ``(B, P, D)`` unit-row
    embeddings.  For every image the loss sums, over patches ``i``,
    ``-log softmax_j(anchor_i . target_j / tau)[i]``: the same-location target
    is the positive and the other ``P - 1`` locations of the same image are
    negatives.  The target is detached.  Batches are averaged.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    a, t = _as_batch(anchor), _as_batch(target).detach()
    if a.shape != t.shape:
        raise ValueError(f"anchor {tuple(a.shape)} and target {tuple(t.shape)} shapes differ")
    b, p, _ = a.shape
    if p < 2:
        raise ValueError("patchnce needs at least 2 patches; no negatives exist otherwise")
    logits = torch.bmm(a, t.transpose(1, 2)) / tau
    targets = torch.arange(p, device=a.device).expand(b, p)
    per_patch = F.cross_entropy(logits.reshape(b * p, p), targets.reshape(-1), reduction="none")
    return per_patch.view(b, p).sum(dim=1).mean()


def matching_loss(anchor: torch.Tensor, target: torch.Tensor, kind: str = "patchnce", tau: float = 0.07) -> torch.Tensor:
    """Same-location matching between two embedding sets; the target is detached.

    ``mse`` and ``smooth_l1`` sum the per-dimension penalty over each row and
    average over rows (and images).
    """
    if kind == "patchnce":
        return patchnce(anchor, target, tau)
    a, t = _as_batch(anchor), _as_batch(target).detach()
    if a.shape != t.shape:
        raise ValueError(f"anchor {tuple(a.shape)} and target {tuple(t.shape)} shapes differ")
    if kind == "mse":
        return (a - t).pow(2).sum(dim=-1).mean()
    if kind == "smooth_l1":
        return F.smooth_l1_loss(a, t, reduction="none", beta=1.0).sum(dim=-1).mean()
    raise ValueError(f"unknown matching loss {kind!r}; choose from {MATCHING_KINDS}")


def cross_contrast(
    p_o: torch.Tensor,
    p_a: torch.Tensor,
    p_o_target: torch.Tensor,
    p_a_target: torch.Tensor,
    kind: str = "patchnce",
    tau: float = 0.07,
    o2a: bool = True,
    a2o: bool = True,
) -> torch.Tensor:
    """Original-view anchors against augmented-view targets plus the reverse.

    ``p_o_target``/``p_a_target`` come from the momentum network (or a
    detached pass of the online one) and never carry gradient.
    """
    total = p_o.new_zeros(())
    if o2a:
        total = total + matching_loss(p_o, p_a_target, kind, tau)
    if a2o:
        total = total + matching_loss(p_a, p_o_target, kind, tau)
    return total


def beta_schedule(epoch: float, beta_max: float, ramp_epochs: float = 5, ramp: bool = True) -> float:
    """Contrastive weight with a sigmoid-shaped ramp ``exp(-5 (1 - t)^2)``, ``t = min(epoch / ramp_epochs, 1)``."""
    if epoch < 0:
        raise ValueError("epoch must be nonnegative")
    if not ramp or ramp_epochs <= 0:
        return float(beta_max)
    t = min(epoch / ramp_epochs, 1.0)
    if t >= 1.0:
        return float(beta_max)
    return float(beta_max * math.exp(-5.0 * (1.0 - t) ** 2))


@torch.no_grad()
def ema_update(momentum: nn.Module, online: nn.Module, m: float) -> None:
    """``theta_m <- m * theta_m + (1 - m) * theta_n`` for every parameter.

    Floating-point buffers follow the same rule; integer buffers are copied.
    """
    if not 0.0 <= m < 1.0:
        raise ValueError(f"momentum coefficient must lie in [0, 1), got {m}")
    online_params = dict(online.named_parameters())
    for name, pm in momentum.named_parameters():
        pn = online_params.get(name)
        if pn is None or pn.shape != pm.shape:
            raise ValueError(f"parameter {name!r} has no congruent online counterpart")
        pm.mul_(m).add_(pn.detach(), alpha=1.0 - m)
    online_buffers = dict(online.named_buffers())
    for name, bm in momentum.named_buffers():
        bn = online_buffers[name]
        if bm.is_floating_point():
            bm.mul_(m).add_(bn, alpha=1.0 - m)
        else:
            bm.copy_(bn)


def init_momentum(momentum: nn.Module, online: nn.Module) -> None:
    """Exact copy of the online weights; the momentum copy never takes gradients."""
    momentum.load_state_dict(online.state_dict())
    for p in momentum.parameters():
        p.requires_grad_(False)


@dataclass
class LossBreakdown:
    cls_original: torch.Tensor
    cls_augmented: torch.Tensor
    contrast: torch.Tensor
    beta_effective: float
    total: torch.Tensor

    def record(self) -> dict:
        return {
            "cls_o": float(self.cls_original.detach()),
            "cls_a": float(self.cls_augmented.detach()),
            "contr": float(self.contrast.detach()),
            "beta": self.beta_effective,
            "total": float(self.total.detach()),
        }


def total_loss(cls_original, cls_augmented, contrast, beta_effective: float) -> LossBreakdown:
    total = 0.5 * (cls_original + cls_augmented) + beta_effective * contrast
    return LossBreakdown(cls_original, cls_augmented, contrast, float(beta_effective), total)


def phama_loss(
    online: nn.Module,
    momentum: nn.Module | None,
    x_o: torch.Tensor,
    x_a: torch.Tensor,
    labels: torch.Tensor,
    beta: float,
    variant: Variant = Variant.full_phama,
    kind: str = "patchnce",
    tau: float = 0.07,
) -> LossBreakdown:
    """Full objective for one batch of original/augmented pairs.

    For the baseline the augmented view is the original itself, so the
    classification term reduces to plain cross-entropy on the originals.
    Without a momentum encoder, contrast targets come from a gradient-free
    pass of the online network.
    """
    variant = Variant(variant)
    if not variant.contrastive:
        if not variant.apda:
            cls_o = cross_entropy(online(x_o), labels)
            return total_loss(cls_o, cls_o, cls_o.new_zeros(()), 0.0)
        logits = online(torch.cat([x_o, x_a]))
        n = x_o.shape[0]
        return total_loss(cross_entropy(logits[:n], labels), cross_entropy(logits[n:], labels), logits.new_zeros(()), 0.0)

    n = x_o.shape[0]
    both = torch.cat([x_o, x_a])
    logits, patches = online.embed(both)
    target_net = momentum if variant.momentum_encoder else online
    if target_net is None:
        raise ValueError(f"variant {variant.value} needs a momentum network")
    with torch.no_grad():
        levels, _ = target_net.forward_features(both)
        targets = target_net.project(levels)
    contrast = cross_contrast(
        patches[:n], patches[n:], targets[:n], targets[n:], kind, tau, o2a=variant.o2a, a2o=variant.a2o
    )
    return total_loss(cross_entropy(logits[:n], labels), cross_entropy(logits[n:], labels), contrast, beta)
