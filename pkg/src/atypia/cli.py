"""Command-line interface tying the pipeline together.

Exit codes: 0 success, 1 validation error, 2 runtime failure. The
``ATYPIA_OUTPUT_DIR`` and ``ATYPIA_SEED`` environment variables override
output directory and seed arguments (and nothing else).
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import diffusion
from .classifier import load_fold_checkpoint
from .data import class_counts, load_fold_plan, load_manifest, save_fold_plan, stratified_kfold
from .errors import ValidationError
from .experiment import (
    ExperimentConfig,
    compare_regimes,
    evaluate_checkpoints,
    load_run_artifacts,
    package_submission,
    render_comparison,
    render_report,
    run_cv_experiment,
)
from .metrics import format_percent

__all__ = ["main"]


def _env_output_dir(value):
    return os.environ.get("ATYPIA_OUTPUT_DIR", value)


def _env_seed(value: int) -> int:
    raw = os.environ.get("ATYPIA_SEED")
    return int(raw) if raw is not None else value


def _gen_config(args) -> diffusion.GenStageConfig:
    if args.profile == "tiny":
        config = diffusion.GenStageConfig.tiny()
    else:
        config = diffusion.GenStageConfig()
    overrides = {}
    if args.pretrain_epochs is not None:
        overrides["pretrain"] = diffusion.StageParams(
            args.pretrain_epochs, config.pretrain.batch_size, config.pretrain.lr
        )
    if args.vae_epochs is not None:
        overrides["finetune_vae_epochs"] = args.vae_epochs
    if args.ddpm_epochs is not None:
        overrides["finetune_ddpm_epochs"] = args.ddpm_epochs
    if overrides:
        from dataclasses import replace

        config = replace(config, **overrides)
    return config


def _cmd_ingest(args) -> int:
    manifest = load_manifest(args.manifest, validate_images=not args.skip_image_check)
    n_neg, n_pos, prevalence = class_counts(manifest)
    print(f"records: {len(manifest)}")
    for label, name in ((0, "normal"), (1, "atypical")):
        real = manifest.count(label, "real")
        synth = manifest.count(label, "synthetic")
        print(f"{name}: {real + synth} (real {real}, synthetic {synth})")
    print(f"prevalence: {prevalence:.4f}")
    return 0


def _cmd_split(args) -> int:
    manifest = load_manifest(args.manifest, validate_images=False)
    plan = stratified_kfold(manifest, args.k, _env_seed(args.seed))
    save_fold_plan(plan, _env_output_dir(args.out))
    print(f"wrote fold plan for {len(plan.assignment)} records to {_env_output_dir(args.out)}")
    return 0


def _cmd_train_generator(args) -> int:
    seed = _env_seed(args.seed)
    out = Path(_env_output_dir(args.out))
    out.mkdir(parents=True, exist_ok=True)
    config = _gen_config(args)
    labeled = load_manifest(args.manifest)
    pretrain_manifest = load_manifest(args.pretrain_manifest) if args.pretrain_manifest else labeled
    plan = load_fold_plan(args.plan, k=args.k, seed=seed)

    base = diffusion.pretrain_generator(pretrain_manifest, config, seed)
    diffusion.save_generator_checkpoint(base, out / "gen_base.ckpt")
    print(f"pretrained generator -> {out / 'gen_base.ckpt'}")
    for ckpt in diffusion.finetune_generator(labeled, plan, base, config, seed):
        path = out / f"gen_fold{ckpt.fold}.ckpt"
        diffusion.save_generator_checkpoint(ckpt, path)
        print(f"fine-tuned fold {ckpt.fold} -> {path}")
    return 0


def _cmd_sample(args) -> int:
    ckpt = diffusion.load_generator_checkpoint(args.checkpoint)
    out = Path(_env_output_dir(args.out))
    out.mkdir(parents=True, exist_ok=True)
    images = diffusion.sample_synthetic(ckpt, args.class_name, args.count, _env_seed(args.seed))
    for i, arr in enumerate(images):
        Image.fromarray(np.asarray(arr)).save(out / f"sample_{i:05d}.png")
    print(f"wrote {len(images)} {args.class_name} samples to {out}")
    return 0


def _cmd_build_pool(args) -> int:
    checkpoints = [diffusion.load_generator_checkpoint(p) for p in args.checkpoints]
    spec = diffusion.SynthPoolSpec(
        atypical_total=args.atypical_total, normal_total=args.normal_total, folds=args.folds
    )
    out = Path(_env_output_dir(args.out))
    manifest = diffusion.build_synth_pool(checkpoints, spec, _env_seed(args.seed), out)
    print(f"built synthetic pool: {len(manifest)} records in {out}")
    return 0


def _cmd_train(args) -> int:
    config = ExperimentConfig.from_file(args.config)
    env_out = os.environ.get("ATYPIA_OUTPUT_DIR")
    env_seed = os.environ.get("ATYPIA_SEED")
    if env_out is not None or env_seed is not None:
        from dataclasses import replace

        config = replace(
            config,
            output_dir=Path(env_out) if env_out is not None else config.output_dir,
            seed=int(env_seed) if env_seed is not None else config.seed,
        )
    artifacts = run_cv_experiment(config, parallel=args.parallel)
    label = f"{config.backbone.family} ({config.regime})"
    print(render_report([(label, artifacts.summaries["auroc"])]), end="")
    return 0


def _cmd_evaluate(args) -> int:
    artifacts = load_run_artifacts(args.run)
    manifest = load_manifest(args.manifest)
    result = evaluate_checkpoints(artifacts.checkpoints, manifest, args.threshold, mode=args.mode)
    lines = [f"mode={result['mode']}", f"threshold={args.threshold}"]
    if args.tag:
        lines.append(f"tag={args.tag}")
        if args.tag == "preliminary":
            lines.append("note=preliminary debug subset; not predictive of final performance")
    for i, report in enumerate(result["reports"]):
        prefix = "" if result["mode"] == "ensemble" else f"fold{i}."
        for key, value in sorted(report.to_flat().items()):
            rendered = format_percent(value) if key != "threshold" else repr(value)
            lines.append(f"{prefix}{key}={rendered}")
    if "auroc_summary" in result:
        lines.append(f"auroc_mean_sd={result['auroc_summary'].render()}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"wrote evaluation to {args.out}")
    else:
        print(text, end="")
    return 0


def _cmd_compare(args) -> int:
    a = load_run_artifacts(args.run_a)
    b = load_run_artifacts(args.run_b)
    print(render_comparison(compare_regimes(a, b)), end="")
    return 0


def _cmd_report(args) -> int:
    rows = []
    for run_dir in args.runs:
        artifacts = load_run_artifacts(run_dir)
        label = f"{artifacts.config.backbone.family} ({artifacts.config.regime})"
        rows.append((label, artifacts.summaries["auroc"]))
    print(render_report(rows), end="")
    return 0


def _cmd_package(args) -> int:
    if args.run:
        artifacts = load_run_artifacts(args.run)
        checkpoints = artifacts.checkpoints
    else:
        checkpoints = [load_fold_checkpoint(p) for p in args.checkpoints]
    out = package_submission(checkpoints, args.input_dir, args.threshold, _env_output_dir(args.out))
    print(f"wrote predictions to {out}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="atypia", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a manifest and print class counts")
    p.add_argument("manifest")
    p.add_argument("--skip-image-check", action="store_true")
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("split", help="write a stratified k-fold plan")
    p.add_argument("manifest")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_split)

    p = sub.add_parser("train-generator", help="pretrain and fold-wise fine-tune the generator")
    p.add_argument("manifest")
    p.add_argument("--plan", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--pretrain-manifest", default=None)
    p.add_argument("--profile", choices=("tiny", "default"), default="tiny")
    p.add_argument("--pretrain-epochs", type=int, default=None)
    p.add_argument("--vae-epochs", type=int, default=None)
    p.add_argument("--ddpm-epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train_generator)

    p = sub.add_parser("sample", help="draw class-conditional samples from a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--class", dest="class_name", choices=("normal", "atypical"), required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("build-pool", help="generate the fold-tagged synthetic pool")
    p.add_argument("--checkpoints", nargs="+", required=True)
    p.add_argument("--atypical-total", type=int, default=20000)
    p.add_argument("--normal-total", type=int, default=10191)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_build_pool)

    p = sub.add_parser("train", help="run a cross-validation experiment from a config file")
    p.add_argument("config")
    p.add_argument("--parallel", action="store_true", help="run folds as independent processes")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="score a labeled manifest with a finished run")
    p.add_argument("--run", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--mode", choices=("ensemble", "per_fold"), default="ensemble")
    p.add_argument("--tag", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("compare", help="per-fold metric deltas between two runs")
    p.add_argument("run_a")
    p.add_argument("run_b")
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("report", help="render the fold table for one or more runs")
    p.add_argument("runs", nargs="+")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("package", help="ensemble-predict an image directory into a submission file")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--run")
    group.add_argument("--checkpoints", nargs="+")
    p.add_argument("--input-dir", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_package)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
