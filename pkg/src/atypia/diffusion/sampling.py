"""Ancestral sampling from trained generators and synthetic-pool construction."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from ..data import Manifest, PatchRecord, save_manifest
from ..errors import ValidationError
from ..seeding import derive_seed
from .checkpoint import GeneratorCheckpoint
from .denoiser import CLASS_INDEX

__all__ = ["SynthPoolSpec", "split_quota", "sample_synthetic", "build_synth_pool"]


def split_quota(total: int, folds: int) -> tuple:
    """Divide a total across folds, remainder going to the lowest fold indices."""
    if folds < 1 or total < 0:
        raise ValidationError("quota split needs folds >= 1 and a non-negative total")
    base, rem = divmod(total, folds)
    return tuple(base + (1 if i < rem else 0) for i in range(folds))


@dataclass(frozen=True)
class SynthPoolSpec:
    """Synthetic pool totals divided across the per-fold generators."""

    atypical_total: int = 20000
    normal_total: int = 10191
    folds: int = 5

    def atypical_quotas(self) -> tuple:
        return split_quota(self.atypical_total, self.folds)

    def normal_quotas(self) -> tuple:
        return split_quota(self.normal_total, self.folds)


def sample_synthetic(
    checkpoint: GeneratorCheckpoint,
    class_name: str,
    count: int,
    seed: int,
    batch_size: int = 64,
) -> list:
    """Draw ``count`` class-conditional images by ancestral reverse diffusion.

    Deterministic per seed; returns 8-bit HxWx3 arrays decoded through the
    checkpoint's codec.
    """
    if not checkpoint.conditional:
        raise ValidationError("class-conditional sampling needs a conditional (fine-tuned) checkpoint")
    if class_name not in CLASS_INDEX:
        raise ValidationError(f"unknown class {class_name!r}")
    if count < 0:
        raise ValidationError("sample count must be non-negative")
    if count == 0:
        return []

    schedule = checkpoint.schedule
    vae, denoiser = checkpoint.vae, checkpoint.denoiser
    vae.eval()
    denoiser.eval()
    c, s, _ = checkpoint.latent_shape
    gen = torch.Generator().manual_seed(seed)
    images = []
    with torch.no_grad():
        for start in range(0, count, batch_size):
            b = min(batch_size, count - start)
            labels = torch.full((b,), CLASS_INDEX[class_name], dtype=torch.long)
            z = torch.randn((b, c, s, s), generator=gen)
            for t in range(schedule.T, 0, -1):
                beta_t = float(schedule.beta[t])
                alpha_t = float(schedule.alpha[t])
                ab_t = float(schedule.alpha_bar[t])
                ab_prev = float(schedule.alpha_bar[t - 1])
                t_vec = torch.full((b,), t, dtype=torch.long)
                eps_hat = denoiser(z, t_vec, labels)
                mean = (z - beta_t / math.sqrt(1.0 - ab_t) * eps_hat) / math.sqrt(alpha_t)
                if t > 1:
                    sigma = math.sqrt(beta_t * (1.0 - ab_prev) / (1.0 - ab_t))
                    z = mean + sigma * torch.randn(z.shape, generator=gen)
                else:
                    z = mean
            decoded = vae.decode(z)
            u8 = ((decoded.clamp(-1, 1) + 1.0) * 127.5).round().to(torch.uint8)
            images.extend(img.permute(1, 2, 0).numpy() for img in u8)
    return images


def build_synth_pool(
    checkpoints: list,
    spec: SynthPoolSpec,
    seed: int,
    out_dir,
) -> Manifest:
    """Generate the full synthetic pool to disk and return its manifest.

    Every record carries provenance ``synthetic`` and the origin_fold of the
    checkpoint that produced it; per-fold quotas are met exactly.
    """
    by_fold = {c.fold: c for c in checkpoints}
    if sorted(by_fold) != list(range(spec.folds)):
        raise ValidationError(f"need exactly one conditional checkpoint per fold 0..{spec.folds - 1}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    quotas = {"atypical": spec.atypical_quotas(), "normal": spec.normal_quotas()}
    for fold in range(spec.folds):
        ckpt = by_fold[fold]
        for class_name, label in (("atypical", 1), ("normal", 0)):
            quota = quotas[class_name][fold]
            images = sample_synthetic(ckpt, class_name, quota, derive_seed(seed, fold, label))
            for i, arr in enumerate(images):
                rid = f"synth-{class_name}-f{fold}-{i:05d}"
                path = out_dir / f"{rid}.png"
                Image.fromarray(np.asarray(arr)).save(path)
                records.append(
                    PatchRecord(
                        id=rid,
                        image_ref=path,
                        label=label,
                        domain="synthetic",
                        provenance="synthetic",
                        origin_fold=fold,
                    )
                )
    manifest = Manifest(records)
    save_manifest(manifest, out_dir / "manifest.csv")
    return manifest
