"""Declarative experiment runner: regime x backbone sweeps over k folds,
report rendering, regime comparison, and submission packaging."""
from __future__ import annotations

import hashlib
import json
import math
import multiprocessing
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .backbones import BackboneSpec, plugin_norm_stats
from .classifier import (
    TrainConfig,
    load_fold_checkpoint,
    predict_proba,
    save_fold_checkpoint,
    score_manifest,
    train_fold,
)
from .configio import dump_config, load_config_file, parse_config_text
from .data import (
    FoldPlan,
    Manifest,
    MixPolicy,
    decode_image,
    load_fold_plan,
    load_manifest,
    save_fold_plan,
    stratified_kfold,
    training_view,
)
from .errors import ValidationError
from .metrics import (
    FoldSummary,
    MetricsReport,
    ScoredSet,
    aggregate_folds,
    ensemble_average,
    format_percent,
)
from .seeding import derive_seed, set_determinism
from .transforms import AugmentConfig, NormStats, apply_eval_transform

__all__ = [
    "ExperimentConfig",
    "RunArtifacts",
    "RegimeComparison",
    "run_cv_experiment",
    "load_run_artifacts",
    "compare_regimes",
    "render_report",
    "render_comparison",
    "package_submission",
    "evaluate_checkpoints",
    "set_determinism",
]

METRIC_NAMES = ("auroc", "accuracy", "sensitivity", "specificity", "balanced_accuracy")
_IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one cross-validation experiment needs, fully explicit."""

    real_manifest: Path
    output_dir: Path
    regime: str = "real_only"
    synth_manifest: Optional[Path] = None
    backbone: BackboneSpec = field(default_factory=lambda: BackboneSpec("native128_conv"))
    train: TrainConfig = field(default_factory=TrainConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    mix: MixPolicy = field(default_factory=MixPolicy)
    norm: NormStats = field(default_factory=NormStats)
    k: int = 5
    seed: int = 0
    eval_threshold: float = 0.5
    validate_images: bool = True

    def __post_init__(self) -> None:
        if self.regime not in ("real_only", "synth_balanced"):
            raise ValidationError(f"unknown regime {self.regime!r}")
        if self.regime == "synth_balanced" and self.synth_manifest is None:
            raise ValidationError("synth_balanced regime requires a synthetic pool manifest")
        if self.k < 2:
            raise ValidationError("cross-validation needs k >= 2")
        if not 0.0 <= self.eval_threshold <= 1.0:
            raise ValidationError("eval threshold must lie in [0, 1]")
        if self.mix.regime != self.regime:
            object.__setattr__(self, "mix", replace(self.mix, regime=self.regime))

    def to_flat(self) -> dict:
        flat = {
            "data.real_manifest": str(self.real_manifest),
            "data.synth_manifest": "" if self.synth_manifest is None else str(self.synth_manifest),
            "data.validate_images": self.validate_images,
            "regime": self.regime,
            "backbone.family": self.backbone.family,
            "backbone.embedding_dim": self.backbone.embedding_dim,
            "backbone.weight_source": self.backbone.weight_source,
            "train.batch_size": self.train.batch_size,
            "train.epochs": self.train.epochs,
            "train.base_lr": self.train.base_lr,
            "train.scheduler_period": self.train.scheduler_period,
            "train.floor_lr": self.train.floor_lr,
            "train.beta1": self.train.beta1,
            "train.beta2": self.train.beta2,
            "train.eps": self.train.eps,
            "train.patience": self.train.patience,
            "augment.scale_min": self.augment.scale_range[0],
            "augment.scale_max": self.augment.scale_range[1],
            "augment.max_rotation_deg": self.augment.max_rotation_deg,
            "augment.translation_fraction": self.augment.translation_fraction,
            "augment.jitter_brightness": self.augment.jitter_brightness,
            "augment.jitter_contrast": self.augment.jitter_contrast,
            "augment.jitter_saturation": self.augment.jitter_saturation,
            "augment.jitter_hue": self.augment.jitter_hue,
            "augment.sharpness_factor": self.augment.sharpness_factor,
            "augment.sharpness_probability": self.augment.sharpness_probability,
            "augment.hflip_probability": self.augment.hflip_probability,
            "augment.vflip_probability": self.augment.vflip_probability,
            "mix.synth_pos_per_fold": self.mix.synth_pos_per_fold,
            "mix.synth_neg_per_fold": self.mix.synth_neg_per_fold,
            "folds.k": self.k,
            "seed": self.seed,
            "output_dir": str(self.output_dir),
            "eval.threshold": self.eval_threshold,
        }
        for i, channel in enumerate("rgb"):
            flat[f"norm.mean_{channel}"] = self.norm.mean[i]
            flat[f"norm.std_{channel}"] = self.norm.std[i]
        return flat

    @classmethod
    def from_flat(cls, flat: dict) -> "ExperimentConfig":
        flat = dict(flat)

        def take(key, default=None, required=False):
            if key not in flat:
                if required:
                    raise ValidationError(f"config missing required key {key!r}")
                return default
            return flat.pop(key)

        real_manifest = Path(str(take("data.real_manifest", required=True)))
        synth_raw = str(take("data.synth_manifest", ""))
        output_dir = Path(str(take("output_dir", required=True)))
        regime = str(take("regime", "real_only"))
        backbone = BackboneSpec(
            family=str(take("backbone.family", "native128_conv")),
            embedding_dim=int(take("backbone.embedding_dim", 64)),
            weight_source=str(take("backbone.weight_source", "random")),
        )
        train = TrainConfig(
            batch_size=int(take("train.batch_size", 16)),
            epochs=int(take("train.epochs", 25)),
            base_lr=float(take("train.base_lr", 1e-4)),
            scheduler_period=float(take("train.scheduler_period", 5.0)),
            floor_lr=float(take("train.floor_lr", 0.0)),
            beta1=float(take("train.beta1", 0.9)),
            beta2=float(take("train.beta2", 0.999)),
            eps=float(take("train.eps", 1e-8)),
            patience=int(take("train.patience", 0)),
        )
        augment = AugmentConfig(
            scale_range=(float(take("augment.scale_min", 0.95)), float(take("augment.scale_max", 1.25))),
            max_rotation_deg=float(take("augment.max_rotation_deg", 30.0)),
            translation_fraction=float(take("augment.translation_fraction", 0.10)),
            jitter_brightness=float(take("augment.jitter_brightness", 0.15)),
            jitter_contrast=float(take("augment.jitter_contrast", 0.15)),
            jitter_saturation=float(take("augment.jitter_saturation", 0.15)),
            jitter_hue=float(take("augment.jitter_hue", 0.05)),
            sharpness_factor=float(take("augment.sharpness_factor", 0.25)),
            sharpness_probability=float(take("augment.sharpness_probability", 0.5)),
            hflip_probability=float(take("augment.hflip_probability", 0.5)),
            vflip_probability=float(take("augment.vflip_probability", 0.5)),
        )
        mix = MixPolicy(
            regime=regime,
            synth_pos_per_fold=int(take("mix.synth_pos_per_fold", 7667)),
            synth_neg_per_fold=int(take("mix.synth_neg_per_fold", 0)),
        )
        norm = NormStats(
            mean=tuple(float(take(f"norm.mean_{c}", d)) for c, d in zip("rgb", (0.485, 0.456, 0.406))),
            std=tuple(float(take(f"norm.std_{c}", d)) for c, d in zip("rgb", (0.229, 0.224, 0.225))),
        )
        config = cls(
            real_manifest=real_manifest,
            output_dir=output_dir,
            regime=regime,
            synth_manifest=Path(synth_raw) if synth_raw else None,
            backbone=backbone,
            train=train,
            augment=augment,
            mix=mix,
            norm=norm,
            k=int(take("folds.k", 5)),
            seed=int(take("seed", 0)),
            eval_threshold=float(take("eval.threshold", 0.5)),
            validate_images=bool(take("data.validate_images", True)),
        )
        if flat:
            raise ValidationError(f"unknown config keys: {sorted(flat)}")
        return config

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        return cls.from_flat(load_config_file(path))

    def snapshot_text(self) -> str:
        return dump_config(self.to_flat())

    def fingerprint(self) -> str:
        return hashlib.sha256(self.snapshot_text().encode()).hexdigest()


@dataclass
class RunArtifacts:
    """Everything a finished cross-validation run produced."""

    output_dir: Path
    config: ExperimentConfig
    plan: FoldPlan
    checkpoints: list
    fold_reports: list
    summaries: dict


@dataclass(frozen=True)
class RegimeComparison:
    """Per-fold and mean AUROC deltas between two runs (a minus b)."""

    label_a: str
    label_b: str
    summary_a: FoldSummary
    summary_b: FoldSummary
    deltas: tuple
    mean_delta: float

    def __post_init__(self) -> None:
        recomputed = tuple(a - b for a, b in zip(self.summary_a.values, self.summary_b.values))
        if recomputed != self.deltas:
            raise ValidationError("stored deltas do not match the fold summaries")
        if not math.isclose(self.mean_delta, sum(self.deltas) / len(self.deltas), abs_tol=1e-9):
            raise ValidationError("stored mean delta does not match the per-fold deltas")


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _report_text(report: MetricsReport) -> str:
    lines = [f"{key}={value!r}" for key, value in sorted(report.to_flat().items())]
    return "\n".join(lines) + "\n"


def _parse_report_text(text: str) -> MetricsReport:
    flat = parse_config_text(text)
    return MetricsReport(**{k: float(v) for k, v in flat.items()})


def _run_log_text(run_log: tuple) -> str:
    lines = ["epoch,train_loss,lr,val_auroc"]
    for epoch, loss, lr, area in run_log:
        lines.append(f"{epoch},{loss!r},{lr!r},{area!r}")
    return "\n".join(lines) + "\n"


def _summary_text(summary: FoldSummary) -> str:
    header = ",".join([f"fold_{i + 1}" for i in range(summary.k)] + ["mean", "sd"])
    row = ",".join(repr(v) for v in (*summary.values, summary.mean, summary.sd))
    return header + "\n" + row + "\n"


def _run_fold(config: ExperimentConfig, real, synth, plan, fold: int, fingerprint: str, out: Path):
    """Train, checkpoint, and evaluate one fold; writes the fold's artifacts."""
    train_m, val_m = training_view(real, plan, fold, config.mix, synth)
    ckpt = train_fold(
        train_m,
        val_m,
        config.backbone,
        config.train,
        config.augment,
        seed=derive_seed(config.seed, 0x51, fold),
        norm=config.norm,
        fold=fold,
    )
    ckpt.config_fingerprint = fingerprint
    save_fold_checkpoint(ckpt, out / f"fold{fold}.ckpt")
    _atomic_write_text(out / f"fold{fold}_log.csv", _run_log_text(ckpt.run_log))
    report = MetricsReport.from_scored(score_manifest(ckpt, val_m), config.eval_threshold)
    _atomic_write_text(out / f"fold{fold}_metrics.txt", _report_text(report))
    return ckpt, report


def _fold_worker(snapshot_text: str, fold: int) -> int:
    """Process entry point for parallel fold execution."""
    config = ExperimentConfig.from_flat(parse_config_text(snapshot_text))
    set_determinism(config.seed)
    real = load_manifest(config.real_manifest, validate_images=config.validate_images)
    synth = None
    if config.regime == "synth_balanced":
        synth = load_manifest(config.synth_manifest, validate_images=config.validate_images)
    plan = stratified_kfold(real, config.k, config.seed)
    _run_fold(config, real, synth, plan, fold, config.fingerprint(), Path(config.output_dir))
    return fold


def run_cv_experiment(config: ExperimentConfig, parallel: bool = False) -> RunArtifacts:
    """Run all folds with fold-derived seeds and persist artifacts.

    Folds run sequentially by default. The opt-in parallel mode runs them as
    independent processes with the same disjoint seeds; results match the
    sequential mode on one machine but bit-identity is not guaranteed across
    platforms. The run directory is marked incomplete until every artifact
    is written; re-running the same config and seed reproduces identical
    metric files.
    """
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    _atomic_write_text(out / "status.txt", "incomplete\n")
    try:
        set_determinism(config.seed)
        if config.backbone.weight_source != "random":
            config = replace(config, norm=plugin_norm_stats(config.backbone.weight_source))
        real = load_manifest(config.real_manifest, validate_images=config.validate_images)
        synth = None
        if config.regime == "synth_balanced":
            synth = load_manifest(config.synth_manifest, validate_images=config.validate_images)
        plan = stratified_kfold(real, config.k, config.seed)
        save_fold_plan(plan, out / "folds.csv")
        snapshot = config.snapshot_text()
        _atomic_write_text(out / "config.txt", snapshot)

        fingerprint = config.fingerprint()
        if parallel:
            context = multiprocessing.get_context("spawn")
            workers = min(config.k, os.cpu_count() or 1)
            with ProcessPoolExecutor(max_workers=workers, mp_context=context) as pool:
                list(pool.map(_fold_worker, [snapshot] * config.k, range(config.k)))
            checkpoints = [load_fold_checkpoint(out / f"fold{f}.ckpt") for f in range(config.k)]
            reports = [
                _parse_report_text((out / f"fold{f}_metrics.txt").read_text())
                for f in range(config.k)
            ]
        else:
            checkpoints, reports = [], []
            for fold in range(config.k):
                ckpt, report = _run_fold(config, real, synth, plan, fold, fingerprint, out)
                checkpoints.append(ckpt)
                reports.append(report)

        summaries = {}
        for name in METRIC_NAMES:
            summary = aggregate_folds([getattr(r, name) for r in reports])
            summaries[name] = summary
            _atomic_write_text(out / f"summary_{name}.csv", _summary_text(summary))
        _atomic_write_text(out / "status.txt", "complete\n")
    except BaseException:
        _atomic_write_text(out / "status.txt", "incomplete\n")
        raise
    return RunArtifacts(
        output_dir=out,
        config=config,
        plan=plan,
        checkpoints=checkpoints,
        fold_reports=reports,
        summaries=summaries,
    )


def load_run_artifacts(run_dir) -> RunArtifacts:
    """Reload a finished run directory; incomplete runs are rejected."""
    run_dir = Path(run_dir)
    status_path = run_dir / "status.txt"
    if not status_path.is_file():
        raise ValidationError(f"{run_dir} is not a run directory (no status.txt)")
    if status_path.read_text().strip() != "complete":
        raise ValidationError(f"run {run_dir} is incomplete")
    config = ExperimentConfig.from_flat(parse_config_text((run_dir / "config.txt").read_text()))
    plan = load_fold_plan(run_dir / "folds.csv", k=config.k, seed=config.seed)
    checkpoints, reports = [], []
    for fold in range(config.k):
        checkpoints.append(load_fold_checkpoint(run_dir / f"fold{fold}.ckpt"))
        reports.append(_parse_report_text((run_dir / f"fold{fold}_metrics.txt").read_text()))
    summaries = {name: aggregate_folds([getattr(r, name) for r in reports]) for name in METRIC_NAMES}
    return RunArtifacts(
        output_dir=run_dir,
        config=config,
        plan=plan,
        checkpoints=checkpoints,
        fold_reports=reports,
        summaries=summaries,
    )


def compare_fold_values(values_a, values_b, label_a: str, label_b: str) -> RegimeComparison:
    if len(values_a) != len(values_b):
        raise ValidationError("regime comparison needs equal fold counts")
    summary_a = aggregate_folds(values_a)
    summary_b = aggregate_folds(values_b)
    deltas = tuple(a - b for a, b in zip(summary_a.values, summary_b.values))
    return RegimeComparison(
        label_a=label_a,
        label_b=label_b,
        summary_a=summary_a,
        summary_b=summary_b,
        deltas=deltas,
        mean_delta=sum(deltas) / len(deltas),
    )


def compare_regimes(a: RunArtifacts, b: RunArtifacts) -> RegimeComparison:
    """Per-fold AUROC deltas (a minus b) for two runs over the same folds.

    No significance claim is attached; the deltas stand on their own.
    """
    if a.config.backbone.family != b.config.backbone.family:
        raise ValidationError("regime comparison requires the same backbone family")
    if a.config.k != b.config.k:
        raise ValidationError("regime comparison requires the same fold count")
    if a.plan.fingerprint() != b.plan.fingerprint():
        raise ValidationError("regime comparison requires identical fold plans")
    return compare_fold_values(
        [r.auroc for r in a.fold_reports],
        [r.auroc for r in b.fold_reports],
        label_a=a.config.regime,
        label_b=b.config.regime,
    )


def render_report(summaries: list) -> str:
    """Fixed-width table of fold values with a Mean ± SD column.

    The displayed mean and sd are re-derived from the fold values as
    rendered, so the printed row is arithmetically self-consistent.
    """
    if not summaries:
        raise ValidationError("nothing to render: no summaries")
    k = summaries[0][1].k
    if any(s.k != k for _, s in summaries):
        raise ValidationError("all rows must have the same fold count")
    label_width = max(len("Model"), max(len(label) for label, _ in summaries))
    header = ["Model".ljust(label_width)] + [f"F{i + 1}".rjust(6) for i in range(k)] + ["Mean ± SD".rjust(14)]
    lines = ["  ".join(header)]
    for label, summary in summaries:
        cells = [label.ljust(label_width)]
        rendered = [format_percent(v) for v in summary.values]
        cells += [r.rjust(6) for r in rendered]
        cells.append(aggregate_folds([float(r) for r in rendered]).render().rjust(14))
        lines.append("  ".join(cells))
    return "\n".join(lines) + "\n"


def render_comparison(comp: RegimeComparison) -> str:
    lines = [
        f"{comp.label_a}: {comp.summary_a.render()}",
        f"{comp.label_b}: {comp.summary_b.render()}",
        "per-fold delta: " + " ".join(format_percent(d) for d in comp.deltas),
        f"mean delta: {format_percent(comp.mean_delta)}",
    ]
    return "\n".join(lines) + "\n"


def _list_images(input_dir: Path) -> list:
    entries = [p for p in input_dir.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES]
    return sorted(entries, key=lambda p: p.stem)


def package_submission(checkpoints: list, input_dir, threshold: float, out_path) -> Path:
    """Ensemble-predict every image in a directory into a predictions file.

    Rows are sorted by id; probabilities are the across-checkpoint mean at
    six decimals and labels apply ``probability >= threshold``. Unreadable
    images are recorded in an ``.errors.csv`` sidecar and skipped.
    """
    if not checkpoints:
        raise ValidationError("need at least one checkpoint to package a submission")
    families = {c.spec.family for c in checkpoints}
    if len(families) > 1:
        raise ValidationError(f"checkpoints mix backbone families: {sorted(families)}")
    if not 0.0 <= threshold <= 1.0:
        raise ValidationError("threshold must lie in [0, 1]")
    input_dir = Path(input_dir)
    if not input_dir.is_dir():
        raise ValidationError(f"input directory not found: {input_dir}")
    paths = _list_images(input_dir)
    if not paths:
        raise ValidationError(f"no images found in {input_dir}")

    side = checkpoints[0].spec.input_side
    norm = checkpoints[0].norm
    ids, batch, errors = [], [], []
    for path in paths:
        try:
            arr = decode_image(path)
        except ValidationError as exc:
            errors.append((path.stem, str(exc)))
            continue
        ids.append(path.stem)
        batch.append(apply_eval_transform(arr, side, norm))

    out_path = Path(out_path)
    lines = ["id,probability,label"]
    if batch:
        stacked = np.stack(batch)
        prob_lists = [predict_proba(ckpt, stacked) for ckpt in checkpoints]
        ensembled = ensemble_average(prob_lists)
        for rid, p in zip(ids, ensembled):
            lines.append(f"{rid},{p:.6f},{int(p >= threshold)}")
    _atomic_write_text(out_path, "\n".join(lines) + "\n")
    if errors:
        err_lines = ["id,error"] + [f"{rid},{msg}" for rid, msg in errors]
        _atomic_write_text(out_path.with_name(out_path.name + ".errors.csv"), "\n".join(err_lines) + "\n")
    meta = {"ensemble_size": len(checkpoints), "threshold": threshold, "n_predictions": len(ids)}
    _atomic_write_text(out_path.with_name(out_path.name + ".meta.json"), json.dumps(meta, indent=2) + "\n")
    return out_path


def evaluate_checkpoints(checkpoints: list, manifest: Manifest, threshold: float, mode: str = "ensemble") -> dict:
    """Score a labeled manifest with an ensemble or per checkpoint.

    Returns a dict with the mode, the reports, and (per-fold mode) an AUROC
    summary, so callers can render or serialize as needed.
    """
    if mode not in ("ensemble", "per_fold"):
        raise ValidationError(f"unknown evaluation mode {mode!r}")
    if not checkpoints:
        raise ValidationError("need at least one checkpoint to evaluate")
    labels = [r.label for r in manifest]
    scored_per_ckpt = [score_manifest(c, manifest) for c in checkpoints]
    if mode == "ensemble":
        probs = ensemble_average([s.probabilities for s in scored_per_ckpt])
        report = MetricsReport.from_scored(ScoredSet(probs, labels), threshold)
        return {"mode": mode, "reports": [report]}
    reports = [MetricsReport.from_scored(s, threshold) for s in scored_per_ckpt]
    return {
        "mode": mode,
        "reports": reports,
        "auroc_summary": aggregate_folds([r.auroc for r in reports]),
    }
