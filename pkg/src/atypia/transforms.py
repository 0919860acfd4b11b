"""Train-time augmentation stack and eval-time resize+normalize transform.

The augmentation order is affine -> color jitter -> sharpness -> flips.
All stochastic choices come from a caller-supplied numpy generator, so the
pipeline is a deterministic function of (image, config, seed); the actual
pixel operations are torchvision functional ops on float tensors.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
import torchvision.transforms.v2.functional as TF

from .errors import ValidationError

__all__ = [
    "AugmentConfig",
    "NormStats",
    "IMAGENET_STATS",
    "apply_train_augment",
    "apply_eval_transform",
    "resize",
]

_MODES = ("bilinear", "nearest")


@dataclass(frozen=True)
class AugmentConfig:
    """Parameters of the train-time augmentation stack.

    Translation is in fractions of the image side; the scale range and the
    jitter/sharpness/flip settings follow the training recipe defaults.
    """

    scale_range: tuple = (0.95, 1.25)
    max_rotation_deg: float = 30.0
    translation_fraction: float = 0.10
    jitter_brightness: float = 0.15
    jitter_contrast: float = 0.15
    jitter_saturation: float = 0.15
    jitter_hue: float = 0.05
    sharpness_factor: float = 0.25
    sharpness_probability: float = 0.5
    hflip_probability: float = 0.5
    vflip_probability: float = 0.5

    def __post_init__(self) -> None:
        lo, hi = self.scale_range
        if not 0.0 < lo <= hi:
            raise ValidationError(f"scale range must satisfy 0 < low <= high, got {self.scale_range}")
        if self.max_rotation_deg < 0:
            raise ValidationError("rotation bound must be non-negative")
        if not 0.0 <= self.translation_fraction <= 0.5:
            raise ValidationError("translation fraction must lie in [0, 0.5]")
        for name in ("jitter_brightness", "jitter_contrast", "jitter_saturation"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be non-negative")
        if not 0.0 <= self.jitter_hue <= 0.5:
            raise ValidationError("hue jitter must lie in [0, 0.5]")
        if self.sharpness_factor < 0:
            raise ValidationError("sharpness factor must be non-negative")
        for name in ("sharpness_probability", "hflip_probability", "vflip_probability"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1]")


@dataclass(frozen=True)
class NormStats:
    """Per-channel mean and std applied after scaling pixels to [0, 1]."""

    mean: tuple = (0.485, 0.456, 0.406)
    std: tuple = (0.229, 0.224, 0.225)

    def __post_init__(self) -> None:
        if len(self.mean) != 3 or len(self.std) != 3:
            raise ValidationError("normalization stats need exactly three channels")
        if any(s <= 0 for s in self.std):
            raise ValidationError("normalization std must be strictly positive")


IMAGENET_STATS = NormStats()


def _to_chw_float(image: np.ndarray) -> torch.Tensor:
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValidationError(f"expected an HxWx3 image, got shape {image.shape}")
    t = torch.from_numpy(np.ascontiguousarray(image)).permute(2, 0, 1)
    return t.float().div_(255.0) if image.dtype == np.uint8 else t.float()


def _affine_warp(t: torch.Tensor, angle: float, tx: float, ty: float, scale: float) -> torch.Tensor:
    """Rotate/scale about the center then translate, reflecting out-of-bounds pixels.

    Implemented as the inverse map in normalized coordinates so one bilinear
    grid_sample does the whole warp.
    """
    side = t.shape[-1]
    rad = math.radians(angle)
    a = math.cos(rad) / scale
    b = math.sin(rad) / scale
    tnx, tny = 2.0 * tx / side, 2.0 * ty / side
    theta = torch.tensor(
        [[a, b, -(a * tnx + b * tny)], [-b, a, b * tnx - a * tny]], dtype=torch.float32
    )
    grid = F.affine_grid(theta[None], (1, 3, side, side), align_corners=False)
    return F.grid_sample(
        t[None], grid, mode="bilinear", padding_mode="reflection", align_corners=False
    )[0]


def apply_train_augment(image: np.ndarray, config: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Augment one u8 HxWx3 image, drawing every random choice from ``rng``.

    Out-of-bounds pixels from the affine warp are filled by reflection.
    Output shape and dtype equal the input's.
    """
    if image.dtype != np.uint8:
        raise ValidationError("train augmentation expects a uint8 image")
    side = image.shape[0]

    # Fixed draw order keeps the rng stream identical whether or not an op applies.
    angle = float(rng.uniform(-config.max_rotation_deg, config.max_rotation_deg))
    tmax = config.translation_fraction * side
    tx = float(rng.uniform(-tmax, tmax))
    ty = float(rng.uniform(-tmax, tmax))
    scale = float(rng.uniform(config.scale_range[0], config.scale_range[1]))
    brightness = float(rng.uniform(1 - config.jitter_brightness, 1 + config.jitter_brightness))
    contrast = float(rng.uniform(1 - config.jitter_contrast, 1 + config.jitter_contrast))
    saturation = float(rng.uniform(1 - config.jitter_saturation, 1 + config.jitter_saturation))
    hue = float(rng.uniform(-config.jitter_hue, config.jitter_hue))
    u_sharp = float(rng.uniform())
    u_hflip = float(rng.uniform())
    u_vflip = float(rng.uniform())

    t = _to_chw_float(image)
    if angle != 0.0 or tx != 0.0 or ty != 0.0 or scale != 1.0:
        t = _affine_warp(t, angle, tx, ty, scale)
    if brightness != 1.0:
        t = TF.adjust_brightness(t, brightness)
    if contrast != 1.0:
        t = TF.adjust_contrast(t, contrast)
    if saturation != 1.0:
        t = TF.adjust_saturation(t, saturation)
    if hue != 0.0:
        t = TF.adjust_hue(t, hue)
    if u_sharp < config.sharpness_probability:
        t = TF.adjust_sharpness(t, config.sharpness_factor)
    if u_hflip < config.hflip_probability:
        t = TF.horizontal_flip(t)
    if u_vflip < config.vflip_probability:
        t = TF.vertical_flip(t)

    out = t.clamp_(0.0, 1.0).mul_(255.0).round_().to(torch.uint8)
    return out.permute(1, 2, 0).numpy()


def resize(image: np.ndarray, side: int, mode: str = "bilinear") -> np.ndarray:
    """Resize a square HxWx3 image to ``side``; u8 stays u8, float stays float."""
    if side <= 0:
        raise ValidationError(f"target side must be positive, got {side}")
    if mode not in _MODES:
        raise ValidationError(f"unknown interpolation mode {mode!r}")
    if image.shape[0] == side and image.shape[1] == side:
        return image.copy()
    is_u8 = image.dtype == np.uint8
    t = torch.from_numpy(np.ascontiguousarray(image)).permute(2, 0, 1).float()
    t = F.interpolate(t[None], size=(side, side), mode=mode, antialias=False)[0]
    if is_u8:
        return t.clamp_(0, 255).round_().to(torch.uint8).permute(1, 2, 0).numpy()
    return t.permute(1, 2, 0).numpy().astype(image.dtype)


def apply_eval_transform(image: np.ndarray, target_size: int, stats: NormStats) -> np.ndarray:
    """Deterministic eval path: scale to [0, 1], resize, normalize per channel.

    Returns a float32 HxWx3 array of side ``target_size``.
    """
    if target_size <= 0:
        raise ValidationError(f"target size must be positive, got {target_size}")
    t = _to_chw_float(image)
    if t.shape[-1] != target_size or t.shape[-2] != target_size:
        t = F.interpolate(t[None], size=(target_size, target_size), mode="bilinear", antialias=False)[0]
    mean = torch.tensor(stats.mean, dtype=torch.float32).view(3, 1, 1)
    std = torch.tensor(stats.std, dtype=torch.float32).view(3, 1, 1)
    t = (t - mean) / std
    return t.permute(1, 2, 0).numpy()
