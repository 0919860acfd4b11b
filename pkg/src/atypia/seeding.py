"""Seed derivation and global determinism control."""
from __future__ import annotations

import random

import numpy as np
import torch

__all__ = ["derive_seed", "set_determinism"]


def derive_seed(*parts: int) -> int:
    """Stable child seed from a tuple of integers (order matters)."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def set_determinism(seed: int) -> None:
    """Seed every generator family the pipeline uses and force deterministic ops."""
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True, warn_only=True)
