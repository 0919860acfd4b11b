"""Backbone zoo: tiny bundled reference networks plus a plugin point for
externally trained encoders (TorchScript files mapping image batches to
embeddings)."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import torch
import torch.nn as nn

from .errors import ValidationError
from .transforms import NormStats

__all__ = ["BackboneSpec", "ClassifierModel", "build_model", "plugin_norm_stats"]

FAMILIES = {"native128_conv": 128, "token224_cls": 224}


@dataclass(frozen=True)
class BackboneSpec:
    """Family (which fixes the input side) plus embedding width and weight source.

    ``weight_source`` is either ``random`` (bundled reference backbone) or a
    path to a TorchScript module producing embeddings.
    """

    family: str
    embedding_dim: int = 64
    weight_source: str = "random"

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise ValidationError(f"unknown backbone family {self.family!r}")
        if self.embedding_dim <= 0:
            raise ValidationError("embedding dim must be positive")

    @property
    def input_side(self) -> int:
        return FAMILIES[self.family]


class SmallConvBackbone(nn.Module):
    """Strided-conv reference backbone for 128x128 inputs."""

    def __init__(self, embedding_dim: int):
        super().__init__()
        widths = (16, 32, 64, 64)
        layers = []
        cin = 3
        for w in widths:
            layers += [nn.Conv2d(cin, w, 3, stride=2, padding=1), nn.GroupNorm(8, w), nn.SiLU()]
            cin = w
        self.features = nn.Sequential(*layers)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.project = nn.Linear(widths[-1], embedding_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.pool(self.features(x)).flatten(1)
        return self.project(h)


class _TokenBlock(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, 4 * dim), nn.SiLU(), nn.Linear(4 * dim, dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.norm1(x)
        x = x + self.attn(h, h, h, need_weights=False)[0]
        return x + self.mlp(self.norm2(x))


class TinyTokenBackbone(nn.Module):
    """Patch-token reference backbone for 224x224 inputs; embeds the class token."""

    def __init__(self, embedding_dim: int, patch_size: int = 32, depth: int = 2, heads: int = 4):
        super().__init__()
        grid = 224 // patch_size
        self.patch_embed = nn.Conv2d(3, embedding_dim, patch_size, stride=patch_size)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, embedding_dim))
        self.pos_embed = nn.Parameter(torch.zeros(1, grid * grid + 1, embedding_dim))
        self.blocks = nn.ModuleList(_TokenBlock(embedding_dim, heads) for _ in range(depth))
        self.norm = nn.LayerNorm(embedding_dim)
        nn.init.normal_(self.pos_embed, std=0.02)
        nn.init.normal_(self.cls_token, std=0.02)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        tokens = self.patch_embed(x).flatten(2).transpose(1, 2)
        cls = self.cls_token.expand(tokens.shape[0], -1, -1)
        h = torch.cat([cls, tokens], dim=1) + self.pos_embed
        for block in self.blocks:
            h = block(h)
        return self.norm(h[:, 0])


class ClassifierModel(nn.Module):
    """Backbone plus a single-logit linear head."""

    def __init__(self, backbone: nn.Module, spec: BackboneSpec):
        super().__init__()
        self.backbone = backbone
        self.head = nn.Linear(spec.embedding_dim, 1)
        self.input_side = spec.input_side

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-2:] != (self.input_side, self.input_side):
            raise ValidationError(
                f"input side mismatch: model expects {self.input_side}, got {tuple(x.shape[-2:])}"
            )
        return self.head(self.backbone(x)).squeeze(-1)


def build_model(spec: BackboneSpec) -> ClassifierModel:
    """Instantiate the model for a spec, loading plugin weights when named."""
    if spec.weight_source == "random":
        if spec.family == "native128_conv":
            backbone: nn.Module = SmallConvBackbone(spec.embedding_dim)
        else:
            backbone = TinyTokenBackbone(spec.embedding_dim)
    else:
        path = Path(spec.weight_source)
        if not path.is_file():
            raise ValidationError(f"unresolvable plugin weight source: {path}")
        try:
            backbone = torch.jit.load(str(path), map_location="cpu")
        except (RuntimeError, ValueError) as exc:
            raise ValidationError(f"cannot load plugin backbone {path}: {exc}") from exc
    return ClassifierModel(backbone, spec)


def plugin_norm_stats(weight_source: str) -> NormStats:
    """Normalization stats for a weight source.

    A plugin may declare its own stats in a ``<file>.norm.json`` sidecar;
    otherwise the ImageNet defaults apply.
    """
    if weight_source != "random":
        sidecar = Path(weight_source + ".norm.json")
        if sidecar.is_file():
            data = json.loads(sidecar.read_text())
            return NormStats(mean=tuple(data["mean"]), std=tuple(data["std"]))
    return NormStats()
