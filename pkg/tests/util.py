"""Shared builders for in-memory manifests and tiny experiment configs."""
from pathlib import Path

from atypia.backbones import BackboneSpec
from atypia.classifier import TrainConfig
from atypia.data import Manifest, MixPolicy, PatchRecord
from atypia.experiment import ExperimentConfig
from atypia.transforms import AugmentConfig

PLACEHOLDER = Path("missing.png")

# Hue jitter and sharpness are the slow augmentations; tests that only need
# the training loop to run use this trimmed stack.
FAST_AUGMENT = AugmentConfig(jitter_hue=0.0, sharpness_probability=0.0)


def toy_experiment_config(toy_dir, out_dir, regime="real_only", pool_dir=None, seed=11, epochs=1):
    return ExperimentConfig(
        real_manifest=Path(toy_dir) / "manifest.csv",
        output_dir=Path(out_dir),
        regime=regime,
        synth_manifest=(Path(pool_dir) / "manifest.csv") if pool_dir else None,
        backbone=BackboneSpec("native128_conv", 16),
        train=TrainConfig(batch_size=16, epochs=epochs, base_lr=1e-3),
        augment=FAST_AUGMENT,
        mix=MixPolicy(regime, synth_pos_per_fold=5, synth_neg_per_fold=1),
        k=5,
        seed=seed,
    )


def mem_records(count, label, provenance="real", origin_fold=None, prefix="rec", start=0):
    return [
        PatchRecord(
            id=f"{prefix}-{label}-{start + i:05d}",
            image_ref=PLACEHOLDER,
            label=label,
            domain=f"dom-{i % 3}",
            provenance=provenance,
            origin_fold=origin_fold,
        )
        for i in range(count)
    ]


def mem_manifest(n_neg, n_pos, prefix="rec"):
    return Manifest(mem_records(n_neg, 0, prefix=prefix) + mem_records(n_pos, 1, prefix=prefix))


def mem_synth_pool(per_fold_pos, per_fold_neg, k, prefix="synth"):
    records = []
    for fold in range(k):
        records += mem_records(per_fold_pos, 1, "synthetic", fold, f"{prefix}-f{fold}")
        records += mem_records(per_fold_neg, 0, "synthetic", fold, f"{prefix}-f{fold}")
    return Manifest(records)
