"""Convolutional VAE mapping pixel space to a compact latent space, and its loss."""
from __future__ import annotations

import math

import torch
import torch.nn as nn

from ..errors import ValidationError

__all__ = ["ConvVae", "vae_loss"]


def _block(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, stride=2, padding=1),
        nn.GroupNorm(min(8, cout), cout),
        nn.SiLU(),
    )


def _up_block(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Upsample(scale_factor=2, mode="nearest"),
        nn.Conv2d(cin, cout, 3, padding=1),
        nn.GroupNorm(min(8, cout), cout),
        nn.SiLU(),
    )


class ConvVae(nn.Module):
    """Strided-conv encoder/decoder pair; images live in [-1, 1].

    ``encode`` returns the posterior (mu, logvar); ``decode`` maps a latent
    back to image space through a tanh output.
    """

    def __init__(self, image_side: int, latent_side: int, latent_channels: int, base_channels: int = 16):
        super().__init__()
        ratio = image_side // latent_side
        stages = int(math.log2(ratio))
        if latent_side * 2**stages != image_side:
            raise ValidationError(
                f"image side {image_side} must be latent side {latent_side} times a power of two"
            )
        widths = [min(base_channels * 2**i, 64) for i in range(stages)]
        enc = [_block(3, widths[0])]
        for cin, cout in zip(widths, widths[1:]):
            enc.append(_block(cin, cout))
        self.encoder = nn.Sequential(*enc)
        self.to_posterior = nn.Conv2d(widths[-1], 2 * latent_channels, 1)
        self.from_latent = nn.Conv2d(latent_channels, widths[-1], 1)
        dec = []
        for cin, cout in zip(widths[::-1], widths[-2::-1]):
            dec.append(_up_block(cin, cout))
        dec.append(nn.Upsample(scale_factor=2, mode="nearest"))
        dec.append(nn.Conv2d(widths[0], 3, 3, padding=1))
        self.decoder = nn.Sequential(*dec)
        self.image_side = image_side
        self.latent_side = latent_side
        self.latent_channels = latent_channels
        self.base_channels = base_channels

    @property
    def latent_shape(self) -> tuple:
        return (self.latent_channels, self.latent_side, self.latent_side)

    def encode(self, x: torch.Tensor) -> tuple:
        h = self.to_posterior(self.encoder(x))
        mu, logvar = h.chunk(2, dim=1)
        return mu, logvar

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        return torch.tanh(self.decoder(self.from_latent(z)))

    def forward(self, x: torch.Tensor) -> tuple:
        mu, logvar = self.encode(x)
        return self.decode(mu), mu, logvar


def vae_loss(x: torch.Tensor, recon: torch.Tensor, mu: torch.Tensor, logvar: torch.Tensor, kl_weight: float) -> torch.Tensor:
    """Mean-squared reconstruction error plus weighted KL to the unit Gaussian.

    The KL term is 0.5 * (mu^2 + exp(logvar) - logvar - 1) per latent
    dimension, summed over dimensions and averaged over the batch.
    """
    if recon.shape != x.shape or mu.shape != logvar.shape:
        raise ValidationError("shape mismatch between reconstruction/posterior and inputs")
    mse = (recon - x).pow(2).mean()
    kl_per_dim = 0.5 * (mu.pow(2) + logvar.exp() - logvar - 1.0)
    kl = kl_per_dim.flatten(1).sum(dim=1).mean()
    loss = mse + kl_weight * kl
    if not torch.isfinite(loss):
        raise ValidationError("VAE loss is not finite")
    return loss
