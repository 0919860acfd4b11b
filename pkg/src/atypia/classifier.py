"""Binary classifier training: stable BCE, cosine warm-restart schedule,
Nesterov-Adam optimization, and AUROC-based checkpoint selection."""
from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .backbones import BackboneSpec, ClassifierModel, build_model
from .data import Manifest, decode_image
from .errors import ValidationError
from .metrics import ScoredSet, auroc
from .seeding import derive_seed
from .transforms import AugmentConfig, IMAGENET_STATS, NormStats, apply_eval_transform, apply_train_augment

__all__ = [
    "TrainConfig",
    "FoldCheckpoint",
    "bce_with_logits",
    "cosine_restart_lr",
    "train_fold",
    "predict_proba",
    "score_manifest",
    "save_fold_checkpoint",
    "load_fold_checkpoint",
]

CHECKPOINT_FORMAT_VERSION = 1


def bce_with_logits(logits, targets) -> torch.Tensor:
    """Mean binary cross-entropy on raw logits, in the stable log-sum-exp form.

    Safe for logits out to at least +-100; targets must be 0 or 1.
    """
    x = torch.as_tensor(logits, dtype=torch.float64 if not torch.is_tensor(logits) else None)
    t = torch.as_tensor(targets, dtype=x.dtype)
    if not torch.isin(t, torch.tensor([0.0, 1.0], dtype=t.dtype)).all():
        raise ValidationError("BCE targets must be 0 or 1")
    loss = torch.clamp(x, min=0) - x * t + torch.log1p(torch.exp(-torch.abs(x)))
    return loss.mean()


def cosine_restart_lr(epoch_position: float, base_lr: float, period: float, floor_lr: float = 0.0) -> float:
    """Cosine-annealed learning rate restarting from ``base_lr`` every period."""
    if period <= 0:
        raise ValidationError("scheduler period must be positive")
    frac = (epoch_position % period) / period
    return floor_lr + 0.5 * (base_lr - floor_lr) * (1.0 + math.cos(math.pi * frac))


@dataclass(frozen=True)
class TrainConfig:
    """Classifier optimization settings (Nesterov-Adam, BCE, AUROC selection).

    ``patience`` of 0 keeps training for the full epoch budget, retaining the
    best checkpoint; a positive value stops early after that many epochs
    without improvement.
    """

    batch_size: int = 16
    epochs: int = 25
    base_lr: float = 1e-4
    scheduler_period: float = 5.0
    floor_lr: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int = 0

    def __post_init__(self) -> None:
        if self.batch_size <= 0 or self.epochs <= 0:
            raise ValidationError("batch size and epoch count must be positive")
        if not self.base_lr > self.floor_lr >= 0:
            raise ValidationError("need base_lr > floor_lr >= 0")
        if self.scheduler_period <= 0:
            raise ValidationError("scheduler period must be positive")
        if self.patience < 0:
            raise ValidationError("patience must be non-negative")

    @classmethod
    def for_family(cls, family: str, **overrides) -> "TrainConfig":
        base_lr = 1e-5 if family == "token224_cls" else 1e-4
        return cls(base_lr=overrides.pop("base_lr", base_lr), **overrides)


@dataclass
class FoldCheckpoint:
    """The selected model of one fold plus enough context to reuse it."""

    spec: BackboneSpec
    norm: NormStats
    state: dict
    fold: int
    selected_epoch: int
    val_auroc: float
    config_fingerprint: str
    run_log: tuple  # rows of (epoch, train_loss, lr, val_auroc)


def _fingerprint(spec: BackboneSpec, config: TrainConfig, augment: AugmentConfig, norm: NormStats) -> str:
    payload = repr((asdict(spec), asdict(config), asdict(augment), asdict(norm)))
    return hashlib.sha256(payload.encode()).hexdigest()


def _batch_tensor(images: list, side: int, norm: NormStats) -> torch.Tensor:
    arrays = [apply_eval_transform(img, side, norm) for img in images]
    return torch.from_numpy(np.stack(arrays)).permute(0, 3, 1, 2)


def _predict(model: ClassifierModel, manifest: Manifest, cache: dict, norm: NormStats, batch_size: int = 64) -> np.ndarray:
    model.eval()
    probs = []
    with torch.no_grad():
        for start in range(0, len(manifest), batch_size):
            chunk = manifest.records[start : start + batch_size]
            x = _batch_tensor([cache[r.id] for r in chunk], model.input_side, norm)
            probs.append(torch.sigmoid(model(x)).numpy())
    return np.concatenate(probs)


def train_fold(
    train: Manifest,
    val: Manifest,
    spec: BackboneSpec,
    config: TrainConfig,
    augment: AugmentConfig,
    seed: int,
    norm: NormStats = IMAGENET_STATS,
    fold: int = -1,
) -> FoldCheckpoint:
    """Train on one fold and return the checkpoint with the best validation AUROC.

    The full epoch budget runs (unless patience is set); ties between epochs
    go to the earliest. Per-epoch loss, learning rate and validation AUROC
    are logged.
    """
    if len(train) == 0 or len(val) == 0:
        raise ValidationError("train and validation sets must be non-empty")
    val_labels = np.array([r.label for r in val])
    if len(set(val_labels.tolist())) < 2:
        raise ValidationError("validation AUROC undefined: validation set has a single class")

    torch.manual_seed(derive_seed(seed, 0x11))
    model = build_model(spec)
    optimizer = torch.optim.NAdam(
        model.parameters(), lr=config.base_lr, betas=(config.beta1, config.beta2), eps=config.eps
    )
    cache = {r.id: decode_image(r.image_ref) for r in train}
    cache.update({r.id: decode_image(r.image_ref) for r in val})
    train_labels = torch.tensor([r.label for r in train], dtype=torch.float32)

    n = len(train)
    log = []
    best: Optional[tuple] = None  # (auroc, epoch, state)
    for epoch in range(config.epochs):
        lr = cosine_restart_lr(epoch, config.base_lr, config.scheduler_period, config.floor_lr)
        for group in optimizer.param_groups:
            group["lr"] = lr
        order = np.random.default_rng([seed, 0x22, epoch]).permutation(n)
        model.train()
        total, batches = 0.0, 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            images = []
            for pos, i in enumerate(idx):
                rec = train.records[i]
                rng = np.random.default_rng([seed, 0x33, epoch, start + pos])
                images.append(apply_train_augment(cache[rec.id], augment, rng))
            x = _batch_tensor(images, spec.input_side, norm)
            y = train_labels[idx]
            loss = bce_with_logits(model(x), y)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += float(loss.detach())
            batches += 1
        train_loss = total / batches

        probs = _predict(model, val, cache, norm)
        val_auroc = auroc(ScoredSet(probs, val_labels))
        log.append((epoch, train_loss, lr, val_auroc))
        if best is None or val_auroc > best[0]:
            state = {k: v.detach().clone() for k, v in model.state_dict().items()}
            best = (val_auroc, epoch, state)
        if config.patience and epoch - best[1] >= config.patience:
            break

    return FoldCheckpoint(
        spec=spec,
        norm=norm,
        state=best[2],
        fold=fold,
        selected_epoch=best[1],
        val_auroc=best[0],
        config_fingerprint=_fingerprint(spec, config, augment, norm),
        run_log=tuple(log),
    )


def predict_proba(checkpoint: FoldCheckpoint, patches: np.ndarray) -> np.ndarray:
    """Probabilities for a batch of already-preprocessed patches (N, H, W, 3)."""
    patches = np.asarray(patches, dtype=np.float32)
    if patches.ndim != 4 or patches.shape[3] != 3:
        raise ValidationError("expected a preprocessed batch of shape (N, H, W, 3)")
    side = checkpoint.spec.input_side
    if patches.shape[1] != side or patches.shape[2] != side:
        raise ValidationError(
            f"preprocessing mismatch: checkpoint expects side {side}, got {patches.shape[1:3]}"
        )
    model = build_model(checkpoint.spec)
    model.load_state_dict(checkpoint.state)
    model.eval()
    with torch.no_grad():
        logits = model(torch.from_numpy(patches).permute(0, 3, 1, 2))
    return torch.sigmoid(logits).numpy()


def score_manifest(checkpoint: FoldCheckpoint, manifest: Manifest, batch_size: int = 64) -> ScoredSet:
    """Decode, preprocess and score every record of a labeled manifest."""
    if len(manifest) == 0:
        raise ValidationError("cannot score an empty manifest")
    probs = []
    side = checkpoint.spec.input_side
    model = build_model(checkpoint.spec)
    model.load_state_dict(checkpoint.state)
    model.eval()
    with torch.no_grad():
        for start in range(0, len(manifest), batch_size):
            chunk = manifest.records[start : start + batch_size]
            arrays = [apply_eval_transform(decode_image(r.image_ref), side, checkpoint.norm) for r in chunk]
            x = torch.from_numpy(np.stack(arrays)).permute(0, 3, 1, 2)
            probs.append(torch.sigmoid(model(x)).numpy())
    labels = [r.label for r in manifest]
    return ScoredSet(np.concatenate(probs), labels)


def save_fold_checkpoint(ckpt: FoldCheckpoint, path) -> Path:
    path = Path(path)
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "kind": "classifier",
        "family": ckpt.spec.family,
        "embedding_dim": ckpt.spec.embedding_dim,
        "weight_source": ckpt.spec.weight_source,
        "norm_mean": list(ckpt.norm.mean),
        "norm_std": list(ckpt.norm.std),
        "state": ckpt.state,
        "fold": ckpt.fold,
        "selected_epoch": ckpt.selected_epoch,
        "val_auroc": ckpt.val_auroc,
        "config_fingerprint": ckpt.config_fingerprint,
        "run_log": [list(row) for row in ckpt.run_log],
    }
    torch.save(payload, path)
    return path


def load_fold_checkpoint(path) -> FoldCheckpoint:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"checkpoint file not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if payload.get("kind") != "classifier" or payload.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ValidationError(f"{path} is not a version-{CHECKPOINT_FORMAT_VERSION} classifier checkpoint")
    return FoldCheckpoint(
        spec=BackboneSpec(
            family=payload["family"],
            embedding_dim=payload["embedding_dim"],
            weight_source=payload["weight_source"],
        ),
        norm=NormStats(mean=tuple(payload["norm_mean"]), std=tuple(payload["norm_std"])),
        state=payload["state"],
        fold=payload["fold"],
        selected_epoch=payload["selected_epoch"],
        val_auroc=payload["val_auroc"],
        config_fingerprint=payload["config_fingerprint"],
        run_log=tuple(tuple(row) for row in payload["run_log"]),
    )
