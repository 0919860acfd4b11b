"""Two-stage generator training: unlabeled pretrain, fold-wise conditional fine-tune."""
from __future__ import annotations

import copy
from typing import Optional

import numpy as np
import torch

from ..data import FoldPlan, Manifest, decode_image
from ..errors import ValidationError
from ..seeding import derive_seed
from .checkpoint import GeneratorCheckpoint
from .config import GenStageConfig
from .denoiser import TokenDenoiser
from .schedule import NoiseSchedule, build_noise_schedule, forward_diffuse
from .vae import ConvVae, vae_loss

__all__ = ["ddpm_training_step", "pretrain_generator", "finetune_generator"]


def images_to_tensor(manifest: Manifest) -> torch.Tensor:
    """Decode every record to one float tensor in [-1, 1], shape (N, 3, H, W)."""
    arrays = [decode_image(rec.image_ref) for rec in manifest]
    stacked = np.stack(arrays).astype(np.float32)
    return torch.from_numpy(stacked).permute(0, 3, 1, 2) / 127.5 - 1.0


def _denoise_loss(
    denoiser: TokenDenoiser,
    z0: torch.Tensor,
    schedule: NoiseSchedule,
    generator: torch.Generator,
    labels: Optional[torch.Tensor],
) -> torch.Tensor:
    """Noise-prediction MSE on already-encoded latents."""
    b = z0.shape[0]
    t = torch.randint(1, schedule.T + 1, (b,), generator=generator)
    eps = torch.randn(z0.shape, generator=generator)
    z_t = torch.stack([forward_diffuse(z0[i], int(t[i]), eps[i], schedule) for i in range(b)])
    pred = denoiser(z_t, t, labels)
    if pred.shape != z0.shape:
        raise ValidationError(f"denoiser output shape {tuple(pred.shape)} != latent {tuple(z0.shape)}")
    loss = (pred - eps).pow(2).mean()
    if not torch.isfinite(loss):
        raise ValidationError("diffusion training loss is not finite")
    return loss


def ddpm_training_step(
    denoiser: TokenDenoiser,
    codec: ConvVae,
    images: torch.Tensor,
    schedule: NoiseSchedule,
    generator: torch.Generator,
    labels: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """One diffusion training loss: encode, noise at a random step, predict.

    Latents are the posterior means; the codec carries no gradient here
    (VAE and diffusion model are trained independently).
    """
    if images.shape[0] == 0:
        raise ValidationError("empty batch")
    with torch.no_grad():
        z0, _ = codec.encode(images)
    return _denoise_loss(denoiser, z0, schedule, generator, labels)


def _train_vae(
    vae: ConvVae,
    images: torch.Tensor,
    epochs: int,
    batch_size: int,
    lr: float,
    kl_weight: float,
    generator: torch.Generator,
) -> list:
    opt = torch.optim.AdamW(vae.parameters(), lr=lr)
    n = images.shape[0]
    history = []
    vae.train()
    for _ in range(epochs):
        order = torch.randperm(n, generator=generator)
        total, batches = 0.0, 0
        for start in range(0, n, batch_size):
            x = images[order[start : start + batch_size]]
            mu, logvar = vae.encode(x)
            eps = torch.randn(mu.shape, generator=generator)
            recon = vae.decode(mu + (0.5 * logvar).exp() * eps)
            loss = vae_loss(x, recon, mu, logvar, kl_weight)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.detach())
            batches += 1
        history.append(total / batches)
    vae.eval()
    return history


def _encode_dataset(vae: ConvVae, images: torch.Tensor, batch_size: int = 64) -> torch.Tensor:
    vae.eval()
    outs = []
    with torch.no_grad():
        for start in range(0, images.shape[0], batch_size):
            mu, _ = vae.encode(images[start : start + batch_size])
            outs.append(mu)
    return torch.cat(outs)


def _train_denoiser(
    denoiser: TokenDenoiser,
    latents: torch.Tensor,
    labels: Optional[torch.Tensor],
    schedule: NoiseSchedule,
    epochs: int,
    batch_size: int,
    lr: float,
    generator: torch.Generator,
) -> list:
    opt = torch.optim.AdamW(denoiser.parameters(), lr=lr)
    n = latents.shape[0]
    history = []
    denoiser.train()
    for _ in range(epochs):
        order = torch.randperm(n, generator=generator)
        total, batches = 0.0, 0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            batch_labels = labels[idx] if labels is not None else None
            loss = _denoise_loss(denoiser, latents[idx], schedule, generator, batch_labels)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.detach())
            batches += 1
        history.append(total / batches)
    denoiser.eval()
    return history


def _build_modules(config: GenStageConfig, seed: int) -> tuple:
    p = config.profile
    torch.manual_seed(derive_seed(seed, 0xC0DE))
    vae = ConvVae(config.image_side, p.latent_side, p.latent_channels, p.vae_base_channels)
    denoiser = TokenDenoiser(
        p.latent_side, p.latent_channels, p.denoiser_patch, p.denoiser_dim, p.denoiser_depth, p.denoiser_heads
    )
    return vae, denoiser


def pretrain_generator(unlabeled: Manifest, config: GenStageConfig, seed: int) -> GeneratorCheckpoint:
    """Train VAE and diffusion model independently on the full unlabeled set."""
    if len(unlabeled) == 0:
        raise ValidationError("cannot pretrain on an empty manifest")
    images = images_to_tensor(unlabeled)
    vae, denoiser = _build_modules(config, seed)
    schedule = build_noise_schedule(config.profile.T, config.profile.beta_start, config.profile.beta_end)

    gen = torch.Generator().manual_seed(derive_seed(seed, 1))
    vae_hist = _train_vae(
        vae, images, config.pretrain.epochs, config.pretrain.batch_size, config.pretrain.lr,
        config.kl_weight, gen,
    )
    latents = _encode_dataset(vae, images)
    ddpm_hist = _train_denoiser(
        denoiser, latents, None, schedule, config.pretrain.epochs, config.pretrain.batch_size,
        config.pretrain.lr, gen,
    )
    return GeneratorCheckpoint(
        vae=vae,
        denoiser=denoiser,
        schedule=schedule,
        schedule_params=(config.profile.T, config.profile.beta_start, config.profile.beta_end),
        conditional=False,
        fold=None,
        config_fingerprint=config.fingerprint(),
        training_ids=unlabeled.ids(),
        loss_history={"vae": vae_hist, "ddpm": ddpm_hist},
        image_side=config.image_side,
    )


def finetune_generator(
    labeled: Manifest,
    plan: FoldPlan,
    base: GeneratorCheckpoint,
    config: GenStageConfig,
    seed: int,
) -> list:
    """Fine-tune one conditional generator per fold, each on that fold's training split."""
    if not labeled.is_real_only:
        raise ValidationError("fine-tuning expects a real-only labeled manifest")
    if base.latent_shape != (config.profile.latent_channels, config.profile.latent_side, config.profile.latent_side):
        raise ValidationError("base checkpoint latent shape does not match the configured profile")
    missing = [r.id for r in labeled if r.id not in plan.assignment]
    if missing:
        raise ValidationError(f"fold plan does not cover record {missing[0]!r}")

    all_images = images_to_tensor(labeled)
    all_labels = torch.tensor([rec.label for rec in labeled], dtype=torch.long)
    checkpoints = []
    for fold in range(plan.k):
        train_idx = [i for i, rec in enumerate(labeled) if plan.assignment[rec.id] != fold]
        train_ids = tuple(labeled.records[i].id for i in train_idx)
        images = all_images[train_idx]
        labels = all_labels[train_idx]

        vae = copy.deepcopy(base.vae)
        denoiser = copy.deepcopy(base.denoiser)
        gen = torch.Generator().manual_seed(derive_seed(seed, 2, fold))
        vae_hist = _train_vae(
            vae, images, config.finetune_vae_epochs, config.finetune_batch_size,
            config.finetune_lr, config.kl_weight, gen,
        )
        latents = _encode_dataset(vae, images)
        ddpm_hist = _train_denoiser(
            denoiser, latents, labels, base.schedule, config.finetune_ddpm_epochs,
            config.finetune_batch_size, config.finetune_lr, gen,
        )
        checkpoints.append(
            GeneratorCheckpoint(
                vae=vae,
                denoiser=denoiser,
                schedule=base.schedule,
                schedule_params=base.schedule_params,
                conditional=True,
                fold=fold,
                config_fingerprint=config.fingerprint(),
                training_ids=train_ids,
                loss_history={"vae": vae_hist, "ddpm": ddpm_hist},
                image_side=config.image_side,
            )
        )
    return checkpoints
