"""Hierarchical encoders, feature-level fusion and the patch projection head."""
from __future__ import annotations

import io
import json
import zipfile
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

CHECKPOINT_FORMAT = "phama-checkpoint"
CHECKPOINT_VERSION = 1


class DegenerateEmbedding(ValueError):
    pass


@dataclass(frozen=True)
class EncoderSpec:
    arch: str = "small_convnet"  # small_convnet | resnet_style
    num_classes: int = 5
    input_size: int = 32
    in_channels: int = 3
    width: int = 64  # small_convnet channels per block
    num_blocks: int = 4  # small_convnet only
    batchnorm: bool = True  # small_convnet only
    depth: int = 18  # resnet_style only: 18 | 34 | 50
    fusion_levels: tuple[int, int] = (3, 4)
    proj_dim: int = 128
    proj_hidden: int | None = None  # defaults to the fused channel count

    def __post_init__(self):
        a, b = self.fusion_levels
        if not a < b:
            raise ValueError(f"fusion levels must be distinct and ascending, got {self.fusion_levels}")
        n_levels = self.num_blocks if self.arch == "small_convnet" else 4
        if a < 1 or b > n_levels:
            raise ValueError(f"fusion levels {self.fusion_levels} outside 1..{n_levels}")


class SmallConvNet(nn.Module):
    """``num_blocks`` x [3x3 conv, (BN), ReLU, 2x2 max-pool]; one pyramid level per block."""

    def __init__(self, in_channels=3, width=64, num_blocks=4, batchnorm=True):
        super().__init__()
        chans = [in_channels] + [width] * num_blocks

        def block(i, o):
            layers = [nn.Conv2d(i, o, 3, padding=1)]
            if batchnorm:
                layers.append(nn.BatchNorm2d(o))
            return nn.Sequential(*layers, nn.ReLU(inplace=True), nn.MaxPool2d(2))

        self.blocks = nn.ModuleList(block(chans[i], chans[i + 1]) for i in range(num_blocks))
        self.level_channels = chans[1:]
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, mode="fan_out", nonlinearity="relu")
                nn.init.zeros_(m.bias)

    def forward(self, x) -> list[torch.Tensor]:
        levels = []
        for block in self.blocks:
            x = block(x)
            levels.append(x)
        return levels


class ResNetStyle(nn.Module):
    """Residual backbone exposing the outputs of its four stages."""

    def __init__(self, depth=18, in_channels=3):
        super().__init__()
        from torchvision.models import resnet18, resnet34, resnet50

        builders = {18: resnet18, 34: resnet34, 50: resnet50}
        if depth not in builders:
            raise ValueError(f"unsupported resnet depth {depth}; choose from {sorted(builders)}")
        net = builders[depth](weights=None)
        if in_channels != 3:
            net.conv1 = nn.Conv2d(in_channels, 64, 7, 2, 3, bias=False)
        self.stem = nn.Sequential(net.conv1, net.bn1, net.relu, net.maxpool)
        self.stages = nn.ModuleList([net.layer1, net.layer2, net.layer3, net.layer4])
        expansion = 4 if depth == 50 else 1
        self.level_channels = [64 * expansion, 128 * expansion, 256 * expansion, 512 * expansion]

    def forward(self, x) -> list[torch.Tensor]:
        x = self.stem(x)
        levels = []
        for stage in self.stages:
            x = stage(x)
            levels.append(x)
        return levels


def fuse_levels(levels: list[torch.Tensor], fusion_levels=(3, 4)) -> torch.Tensor:
    """Bilinearly resize level ``b`` to level ``a``'s grid and concatenate channels.

    Levels are 1-indexed, ``levels[0]`` being level 1.
    """
    a, b = fusion_levels
    if not a < b:
        raise ValueError(f"fusion levels must be ascending, got {fusion_levels}")
    if a < 1 or b > len(levels):
        raise ValueError(f"fusion levels {fusion_levels} not available; pyramid has levels 1..{len(levels)}")
    low, high = levels[a - 1], levels[b - 1]
    if high.shape[-2:] != low.shape[-2:]:
        high = F.interpolate(high, size=low.shape[-2:], mode="bilinear", align_corners=False)
    return torch.cat([low, high], dim=1)


class ProjectionHead(nn.Module):
    """Two-layer location-wise MLP (two 1x1 convolutions) with L2-normalized output."""

    def __init__(self, in_channels: int, hidden: int | None = None, out_dim: int = 128):
        super().__init__()
        hidden = hidden or in_channels
        self.fc1 = nn.Conv2d(in_channels, hidden, 1)
        self.fc2 = nn.Conv2d(hidden, out_dim, 1)

    def forward(self, fused: torch.Tensor) -> torch.Tensor:
        """``(B, C, H, W) -> (B, H*W, D)`` unit rows, locations in row-major order."""
        z = self.fc2(F.relu(self.fc1(fused)))
        z = z.flatten(2).transpose(1, 2)
        norms = z.norm(dim=-1, keepdim=True)
        if bool((norms < 1e-12).any()):
            raise DegenerateEmbedding("degenerate embedding: a patch vector has norm below 1e-12")
        return z / norms


class PhaMaNet(nn.Module):
    """Encoder + linear classifier on the pooled top level + patch projection head."""

    def __init__(self, spec: EncoderSpec):
        super().__init__()
        self.spec = spec
        if spec.arch == "small_convnet":
            self.encoder = SmallConvNet(spec.in_channels, spec.width, spec.num_blocks, spec.batchnorm)
        elif spec.arch == "resnet_style":
            self.encoder = ResNetStyle(spec.depth, spec.in_channels)
        else:
            raise ValueError(f"unknown architecture {spec.arch!r}")
        chans = self.encoder.level_channels
        self.classifier = nn.Linear(chans[-1], spec.num_classes)
        a, b = spec.fusion_levels
        self.projection = ProjectionHead(chans[a - 1] + chans[b - 1], spec.proj_hidden, spec.proj_dim)

    def _check_input(self, x):
        expected = (self.spec.in_channels, self.spec.input_size, self.spec.input_size)
        if tuple(x.shape[1:]) != expected:
            raise ValueError(f"expected input of shape (batch, {', '.join(map(str, expected))}), got {tuple(x.shape)}")

    def forward_features(self, x) -> tuple[list[torch.Tensor], torch.Tensor]:
        self._check_input(x)
        levels = self.encoder(x)
        return levels, self.classifier(pooled(levels[-1]))

    def forward(self, x) -> torch.Tensor:
        return self.forward_features(x)[1]

    def project(self, levels) -> torch.Tensor:
        return self.projection(fuse_levels(levels, self.spec.fusion_levels))

    def embed(self, x) -> tuple[torch.Tensor, torch.Tensor]:
        """Return ``(logits, patch embeddings of shape (B, P, D))``."""
        levels, logits = self.forward_features(x)
        return logits, self.project(levels)

    def penultimate(self, x) -> torch.Tensor:
        return pooled(self.forward_features(x)[0][-1])


def pooled(feature: torch.Tensor) -> torch.Tensor:
    return feature.mean(dim=(-2, -1))


def level_shapes(spec: EncoderSpec) -> list[tuple[int, int, int]]:
    """``(C, H, W)`` of each pyramid level for a single input, from a dry run."""
    net = PhaMaNet(spec).eval()
    with torch.no_grad():
        levels, _ = net.forward_features(torch.zeros(1, spec.in_channels, spec.input_size, spec.input_size))
    return [tuple(l.shape[1:]) for l in levels]


def load_pretrained(model: PhaMaNet, path: str | Path) -> None:
    """Load encoder weights from a torch state-dict file; missing head keys are ignored."""
    state = torch.load(path, map_location="cpu", weights_only=True)
    model.encoder.load_state_dict(state, strict=False)


def save_checkpoint(path: str | Path, model: PhaMaNet, manifest: dict) -> None:
    """Write a zip archive holding ``manifest.json`` and ``params.npz``."""
    buf = io.BytesIO()
    arrays = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    np.savez(buf, **arrays)
    full = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, "encoder_spec": asdict(model.spec), **manifest}
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        zf.writestr("manifest.json", json.dumps(full, indent=1, sort_keys=True))
        zf.writestr("params.npz", buf.getvalue())


def load_checkpoint(path: str | Path) -> tuple[PhaMaNet, dict]:
    with zipfile.ZipFile(path) as zf:
        manifest = json.loads(zf.read("manifest.json"))
        if manifest.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path} is not a {CHECKPOINT_FORMAT} archive")
        if manifest.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {manifest.get('version')}")
        with np.load(io.BytesIO(zf.read("params.npz"))) as npz:
            state = {k: torch.from_numpy(npz[k]) for k in npz.files}
    spec_dict = dict(manifest["encoder_spec"])
    spec_dict["fusion_levels"] = tuple(spec_dict["fusion_levels"])
    model = PhaMaNet(EncoderSpec(**spec_dict))
    model.load_state_dict(state)
    model.eval()
    return model, manifest
