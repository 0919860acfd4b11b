"""Token-based conditional noise predictor operating on patchified latents."""
from __future__ import annotations

import math

import torch
import torch.nn as nn

from ..errors import ValidationError

__all__ = ["TokenDenoiser", "CLASS_INDEX", "UNCONDITIONAL_INDEX", "timestep_embedding"]

# Class-condition vocabulary: the two labels plus an unconditional slot so
# unlabeled pretraining and conditional fine-tuning share one interface.
CLASS_INDEX = {"normal": 0, "atypical": 1}
UNCONDITIONAL_INDEX = 2


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    """Sinusoidal embedding of integer timesteps, shape (B, dim)."""
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float32) / half)
    args = t.float()[:, None] * freqs[None]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[:, :1])], dim=-1)
    return emb


class _Block(nn.Module):
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


class TokenDenoiser(nn.Module):
    """Predicts the noise in a latent from (z_t, step, class condition).

    Latents are patchified into tokens; the timestep embedding plus a learned
    class embedding (with a dedicated unconditional slot) is added to every
    token before the transformer blocks.
    """

    def __init__(
        self,
        latent_side: int,
        latent_channels: int,
        patch_size: int = 2,
        dim: int = 64,
        depth: int = 2,
        heads: int = 4,
    ):
        super().__init__()
        if latent_side % patch_size != 0:
            raise ValidationError("latent side must be divisible by the patch size")
        self.latent_side = latent_side
        self.latent_channels = latent_channels
        self.patch_size = patch_size
        self.grid = latent_side // patch_size
        patch_dim = latent_channels * patch_size * patch_size
        self.patch_embed = nn.Conv2d(latent_channels, dim, patch_size, stride=patch_size)
        self.pos_embed = nn.Parameter(torch.zeros(1, self.grid * self.grid, dim))
        self.time_mlp = nn.Sequential(nn.Linear(dim, dim), nn.SiLU(), nn.Linear(dim, dim))
        self.class_embed = nn.Embedding(3, dim)
        self.blocks = nn.ModuleList(_Block(dim, heads) for _ in range(depth))
        self.out_norm = nn.LayerNorm(dim)
        self.out_proj = nn.Linear(dim, patch_dim)
        self.dim = dim
        self.depth = depth
        self.heads = heads
        nn.init.normal_(self.pos_embed, std=0.02)

    def forward(self, z: torch.Tensor, t: torch.Tensor, labels: torch.Tensor = None) -> torch.Tensor:
        b, c, s, _ = z.shape
        if c != self.latent_channels or s != self.latent_side:
            raise ValidationError(
                f"latent shape {tuple(z.shape[1:])} does not match denoiser "
                f"({self.latent_channels}, {self.latent_side}, {self.latent_side})"
            )
        if labels is None:
            cond_idx = torch.full((b,), UNCONDITIONAL_INDEX, dtype=torch.long, device=z.device)
        else:
            cond_idx = labels.long()
        cond = self.time_mlp(timestep_embedding(t, self.dim)) + self.class_embed(cond_idx)
        x = self.patch_embed(z).flatten(2).transpose(1, 2)
        x = x + self.pos_embed + cond[:, None, :]
        for block in self.blocks:
            x = block(x)
        x = self.out_proj(self.out_norm(x))
        p, g = self.patch_size, self.grid
        x = x.view(b, g, g, self.latent_channels, p, p)
        x = x.permute(0, 3, 1, 4, 2, 5).reshape(b, self.latent_channels, s, s)
        return x
