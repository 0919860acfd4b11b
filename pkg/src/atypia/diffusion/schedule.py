"""Forward-diffusion variance schedule and the closed-form noising kernel."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError

__all__ = ["NoiseSchedule", "build_noise_schedule", "forward_diffuse"]


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Per-step variances beta[1..T] with alpha and cumulative alpha_bar.

    Arrays are length T+1 and 1-indexed by step; index 0 holds the
    conveniences beta=0, alpha=1, alpha_bar=1 used by reverse sampling.
    """

    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    def __post_init__(self) -> None:
        T = self.T
        if T < 1:
            raise ValidationError("schedule needs at least one step")
        b = self.beta[1:]
        if not ((b > 0).all() and (b < 1).all()):
            raise ValidationError("beta values must lie strictly in (0, 1)")
        if (np.diff(b) < 0).any():
            raise ValidationError("beta must be non-decreasing")
        ab = self.alpha_bar
        if not ((ab[1:] > 0).all() and (ab[1:] < 1).all() and (np.diff(ab) < 0).all()):
            raise ValidationError("alpha_bar must be strictly decreasing within (0, 1)")

    @property
    def T(self) -> int:
        return len(self.beta) - 1


def build_noise_schedule(T: int, beta_start: float, beta_end: float) -> NoiseSchedule:
    """Linear beta schedule over T steps with running-product alpha_bar."""
    if T < 1:
        raise ValidationError(f"step count must be >= 1, got {T}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValidationError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    beta = np.concatenate([[0.0], np.linspace(beta_start, beta_end, T)])
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    return NoiseSchedule(beta=beta, alpha=alpha, alpha_bar=alpha_bar)


def forward_diffuse(x0, t: int, eps, schedule: NoiseSchedule):
    """Closed-form q(x_t | x_0): sqrt(ab_t) * x0 + sqrt(1 - ab_t) * eps.

    Works on numpy arrays and torch tensors alike; no iteration involved.
    """
    if not 1 <= t <= schedule.T:
        raise ValidationError(f"step {t} outside [1, {schedule.T}]")
    if getattr(eps, "shape", None) != getattr(x0, "shape", None):
        raise ValidationError("noise must have the same shape as the input")
    ab = float(schedule.alpha_bar[t])
    return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * eps
