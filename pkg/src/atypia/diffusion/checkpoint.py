"""Self-describing generator checkpoint container."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import torch

from ..errors import ValidationError
from .denoiser import TokenDenoiser
from .schedule import NoiseSchedule, build_noise_schedule
from .vae import ConvVae

__all__ = ["GeneratorCheckpoint", "save_generator_checkpoint", "load_generator_checkpoint"]

FORMAT_VERSION = 1


@dataclass
class GeneratorCheckpoint:
    """Codec + denoiser + schedule, tagged with provenance for auditing.

    ``training_ids`` records exactly which manifest records the stage saw,
    so fold-disjointness can be verified after the fact.
    """

    vae: ConvVae
    denoiser: TokenDenoiser
    schedule: NoiseSchedule
    schedule_params: tuple
    conditional: bool
    fold: Optional[int]
    config_fingerprint: str
    training_ids: tuple
    loss_history: dict
    image_side: int

    @property
    def latent_shape(self) -> tuple:
        return self.vae.latent_shape


def save_generator_checkpoint(ckpt: GeneratorCheckpoint, path) -> Path:
    path = Path(path)
    T, beta_start, beta_end = ckpt.schedule_params
    payload = {
        "format_version": FORMAT_VERSION,
        "kind": "generator",
        "conditional": ckpt.conditional,
        "fold": -1 if ckpt.fold is None else ckpt.fold,
        "image_side": ckpt.image_side,
        "schedule": {"T": T, "beta_start": beta_start, "beta_end": beta_end},
        "vae_arch": {
            "image_side": ckpt.vae.image_side,
            "latent_side": ckpt.vae.latent_side,
            "latent_channels": ckpt.vae.latent_channels,
            "base_channels": ckpt.vae.base_channels,
        },
        "denoiser_arch": {
            "latent_side": ckpt.denoiser.latent_side,
            "latent_channels": ckpt.denoiser.latent_channels,
            "patch_size": ckpt.denoiser.patch_size,
            "dim": ckpt.denoiser.dim,
            "depth": ckpt.denoiser.depth,
            "heads": ckpt.denoiser.heads,
        },
        "vae_state": ckpt.vae.state_dict(),
        "denoiser_state": ckpt.denoiser.state_dict(),
        "config_fingerprint": ckpt.config_fingerprint,
        "training_ids": list(ckpt.training_ids),
        "loss_history": ckpt.loss_history,
    }
    torch.save(payload, path)
    return path


def load_generator_checkpoint(path) -> GeneratorCheckpoint:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"checkpoint file not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if payload.get("kind") != "generator" or payload.get("format_version") != FORMAT_VERSION:
        raise ValidationError(f"{path} is not a version-{FORMAT_VERSION} generator checkpoint")
    vae = ConvVae(**payload["vae_arch"])
    vae.load_state_dict(payload["vae_state"])
    denoiser = TokenDenoiser(**payload["denoiser_arch"])
    denoiser.load_state_dict(payload["denoiser_state"])
    sched = payload["schedule"]
    fold = payload["fold"]
    return GeneratorCheckpoint(
        vae=vae,
        denoiser=denoiser,
        schedule=build_noise_schedule(sched["T"], sched["beta_start"], sched["beta_end"]),
        schedule_params=(sched["T"], sched["beta_start"], sched["beta_end"]),
        conditional=payload["conditional"],
        fold=None if fold < 0 else fold,
        config_fingerprint=payload["config_fingerprint"],
        training_ids=tuple(payload["training_ids"]),
        loss_history=payload["loss_history"],
        image_side=payload["image_side"],
    )
