"""Generator architecture profiles and two-stage training configuration."""
from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field

from ..errors import ValidationError

__all__ = ["DiffusionProfile", "StageParams", "GenStageConfig", "DEFAULT_PROFILE", "TINY_PROFILE"]


@dataclass(frozen=True)
class DiffusionProfile:
    """Schedule and network sizes shared by one generator family."""

    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    latent_side: int = 16
    latent_channels: int = 4
    vae_base_channels: int = 32
    denoiser_patch: int = 2
    denoiser_dim: int = 128
    denoiser_depth: int = 4
    denoiser_heads: int = 4


DEFAULT_PROFILE = DiffusionProfile()

# Desk-scale profile: the full two-stage protocol runs on CPU in minutes.
TINY_PROFILE = DiffusionProfile(
    T=50,
    latent_side=8,
    latent_channels=2,
    vae_base_channels=16,
    denoiser_patch=2,
    denoiser_dim=64,
    denoiser_depth=2,
    denoiser_heads=4,
)


@dataclass(frozen=True)
class StageParams:
    epochs: int
    batch_size: int
    lr: float


@dataclass(frozen=True)
class GenStageConfig:
    """Unlabeled pretrain followed by label-conditioned fine-tune (AdamW both)."""

    pretrain: StageParams = field(default_factory=lambda: StageParams(1000, 32, 1e-4))
    finetune_vae_epochs: int = 2000
    finetune_ddpm_epochs: int = 5000
    finetune_batch_size: int = 8
    finetune_lr: float = 1e-4
    image_side: int = 128
    kl_weight: float = 1e-4
    profile: DiffusionProfile = DEFAULT_PROFILE

    def __post_init__(self) -> None:
        counts = (
            self.pretrain.epochs,
            self.pretrain.batch_size,
            self.finetune_vae_epochs,
            self.finetune_ddpm_epochs,
            self.finetune_batch_size,
            self.image_side,
        )
        if any(c <= 0 for c in counts):
            raise ValidationError("all generator epoch/batch/size counts must be positive")
        if self.pretrain.lr <= 0 or self.finetune_lr <= 0:
            raise ValidationError("learning rates must be positive")
        if self.kl_weight < 0:
            raise ValidationError("kl weight must be non-negative")

    @classmethod
    def tiny(cls, pretrain_epochs: int = 20, vae_epochs: int = 6, ddpm_epochs: int = 30) -> "GenStageConfig":
        """Desk-scale settings for CPU smoke runs and tests."""
        return cls(
            pretrain=StageParams(pretrain_epochs, 32, 1e-3),
            finetune_vae_epochs=vae_epochs,
            finetune_ddpm_epochs=ddpm_epochs,
            finetune_batch_size=16,
            finetune_lr=1e-3,
            profile=TINY_PROFILE,
        )

    def fingerprint(self) -> str:
        payload = repr(sorted(_flatten(asdict(self)).items()))
        return hashlib.sha256(payload.encode()).hexdigest()


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, f"{key}."))
        else:
            out[key] = v
    return out
