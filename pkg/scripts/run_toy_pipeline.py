#!/usr/bin/env python3
"""Full desk-scale pipeline on the toy dataset.

Generates toy data, trains the tiny latent-diffusion generator (pretrain +
per-fold fine-tune), builds a fold-tagged synthetic pool, trains classifiers
under both regimes, and prints the comparison table. Runs on CPU in a few
minutes with the default sizes.
"""
import argparse
import time
from pathlib import Path

from atypia.backbones import BackboneSpec
from atypia.classifier import TrainConfig
from atypia.data import MixPolicy, load_manifest, stratified_kfold
from atypia.diffusion import (
    GenStageConfig,
    SynthPoolSpec,
    build_synth_pool,
    finetune_generator,
    pretrain_generator,
    save_generator_checkpoint,
)
from atypia.experiment import (
    ExperimentConfig,
    compare_regimes,
    package_submission,
    render_comparison,
    render_report,
    run_cv_experiment,
)
from atypia.toydata import make_toy_dataset
from atypia.transforms import AugmentConfig


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("out_dir")
    parser.add_argument("--n", type=int, default=500)
    parser.add_argument("--positive-fraction", type=float, default=0.15)
    parser.add_argument("--k", type=int, default=5)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--epochs", type=int, default=3)
    parser.add_argument("--synth-per-fold", type=int, default=280)
    parser.add_argument("--parallel", action="store_true")
    args = parser.parse_args()

    started = time.time()
    root = Path(args.out_dir)
    data_dir = root / "data"
    print("== toy dataset ==")
    manifest_path = make_toy_dataset(data_dir, args.n, args.positive_fraction, args.seed)
    manifest = load_manifest(manifest_path)
    plan = stratified_kfold(manifest, args.k, args.seed)

    print("== generator: pretrain + fold-wise fine-tune ==")
    gen_config = GenStageConfig.tiny(pretrain_epochs=6, vae_epochs=3, ddpm_epochs=20)
    base = pretrain_generator(manifest, gen_config, args.seed)
    save_generator_checkpoint(base, root / "gen_base.ckpt")
    fold_generators = finetune_generator(manifest, plan, base, gen_config, args.seed)
    for ckpt in fold_generators:
        save_generator_checkpoint(ckpt, root / f"gen_fold{ckpt.fold}.ckpt")

    print("== synthetic pool ==")
    pool_spec = SynthPoolSpec(
        atypical_total=args.synth_per_fold * args.k,
        normal_total=5 * args.k,
        folds=args.k,
    )
    build_synth_pool(fold_generators, pool_spec, args.seed, root / "pool")

    def experiment(regime: str) -> ExperimentConfig:
        return ExperimentConfig(
            real_manifest=manifest_path,
            output_dir=root / f"run-{regime}",
            regime=regime,
            synth_manifest=(root / "pool" / "manifest.csv") if regime == "synth_balanced" else None,
            backbone=BackboneSpec("native128_conv", 32),
            train=TrainConfig(batch_size=16, epochs=args.epochs, base_lr=1e-3),
            augment=AugmentConfig(),
            mix=MixPolicy(regime, synth_pos_per_fold=args.synth_per_fold, synth_neg_per_fold=0),
            k=args.k,
            seed=args.seed,
        )

    print("== classifier: real_only ==")
    real_run = run_cv_experiment(experiment("real_only"), parallel=args.parallel)
    print("== classifier: synth_balanced ==")
    synth_run = run_cv_experiment(experiment("synth_balanced"), parallel=args.parallel)

    print(render_report([
        ("real_only", real_run.summaries["auroc"]),
        ("synth_balanced", synth_run.summaries["auroc"]),
    ]))
    print(render_comparison(compare_regimes(real_run, synth_run)))

    print("== submission packaging (ensemble of real_only folds) ==")
    preds = package_submission(real_run.checkpoints, data_dir, 0.5, root / "predictions.csv")
    print(f"predictions at {preds}")
    print(f"total wall time: {time.time() - started:.0f}s")


if __name__ == "__main__":
    main()
