"""Class-conditional latent diffusion for synthesizing minority-class patches."""

from .checkpoint import GeneratorCheckpoint, load_generator_checkpoint, save_generator_checkpoint
from .config import DEFAULT_PROFILE, TINY_PROFILE, DiffusionProfile, GenStageConfig, StageParams
from .denoiser import CLASS_INDEX, UNCONDITIONAL_INDEX, TokenDenoiser
from .sampling import SynthPoolSpec, build_synth_pool, sample_synthetic, split_quota
from .schedule import NoiseSchedule, build_noise_schedule, forward_diffuse
from .training import ddpm_training_step, finetune_generator, images_to_tensor, pretrain_generator
from .vae import ConvVae, vae_loss

__all__ = [
    "GeneratorCheckpoint",
    "load_generator_checkpoint",
    "save_generator_checkpoint",
    "DiffusionProfile",
    "GenStageConfig",
    "StageParams",
    "DEFAULT_PROFILE",
    "TINY_PROFILE",
    "TokenDenoiser",
    "CLASS_INDEX",
    "UNCONDITIONAL_INDEX",
    "SynthPoolSpec",
    "build_synth_pool",
    "sample_synthetic",
    "split_quota",
    "NoiseSchedule",
    "build_noise_schedule",
    "forward_diffuse",
    "ddpm_training_step",
    "finetune_generator",
    "pretrain_generator",
    "images_to_tensor",
    "ConvVae",
    "vae_loss",
]
