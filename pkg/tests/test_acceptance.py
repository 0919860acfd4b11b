"""Acceptance gate: table-arithmetic reproduction plus property suites.

Each criterion prints one pass/fail line (visible with ``pytest -s`` or in
captured output) and asserts its stated tolerance and runtime bound.
"""
import functools
import math
import time

import numpy as np
import pytest
import torch

from atypia.backbones import BackboneSpec
from atypia.classifier import TrainConfig, bce_with_logits, cosine_restart_lr
from atypia.data import Manifest, MixPolicy, load_manifest, stratified_kfold, training_view
from atypia.diffusion import (
    GenStageConfig,
    SynthPoolSpec,
    TINY_PROFILE,
    build_noise_schedule,
    build_synth_pool,
    finetune_generator,
    forward_diffuse,
    pretrain_generator,
    vae_loss,
)
from atypia.experiment import ExperimentConfig, run_cv_experiment
from atypia.metrics import (
    MetricsReport,
    ScoredSet,
    aggregate_folds,
    auroc,
    balanced_accuracy,
    format_fraction,
    select_submission,
)
from atypia.toydata import make_toy_dataset
from atypia.transforms import AugmentConfig

from util import mem_records

CV_ROWS = {
    "convnext_real": ([93.84, 94.74, 93.63, 95.68, 95.21], "94.62 ± 0.78"),
    "convnext_synth": ([93.55, 94.40, 93.74, 95.22, 94.96], "94.37 ± 0.65"),
    "lunit_real": ([94.22, 94.97, 94.13, 95.25, 95.31], "94.78 ± 0.50"),
    "lunit_synth": ([93.83, 94.49, 93.96, 95.08, 94.78], "94.43 ± 0.48"),
}

PRELIM_ROWS = [
    ("convnext_real", 95.42, 88.61, 88.73, 88.58, "88.66"),
    ("convnext_synth", 94.99, 88.89, 87.32, 89.27, "88.30"),
    ("lunit_real", 93.81, 86.39, 85.92, 86.51, "86.21"),
    ("lunit_synth", 94.01, 88.33, 88.73, 88.23, "88.48"),
]


def criterion(number, description, budget_s):
    def wrap(fn):
        @functools.wraps(fn)
        def inner(*args, **kwargs):
            start = time.perf_counter()
            try:
                fn(*args, **kwargs)
            except BaseException:
                print(f"[FAIL] criterion {number}: {description}")
                raise
            elapsed = time.perf_counter() - start
            assert elapsed < budget_s, f"criterion {number} took {elapsed:.1f}s (budget {budget_s}s)"
            print(f"[PASS] criterion {number}: {description} ({elapsed:.1f}s)")

        return inner

    return wrap


@criterion(1, "five-fold table aggregation renders exactly", 1.0)
def test_criterion_1_cv_table_aggregation():
    for name, (values, expected) in CV_ROWS.items():
        summary = aggregate_folds(values)
        assert summary.render() == expected, name


@criterion(2, "preliminary-table balanced accuracy and submission selection", 1.0)
def test_criterion_2_prelim_table_and_selection():
    candidates = []
    for name, area, acc, sens, spec, _ in PRELIM_ROWS:
        report = MetricsReport(
            auroc=area,
            accuracy=acc,
            sensitivity=sens,
            specificity=spec,
            balanced_accuracy=balanced_accuracy(sens, spec),
            threshold=0.5,
        )
        candidates.append((name, report))
    assert select_submission(candidates) == "convnext_real"

    rendered = [
        format_fraction(balanced_accuracy(sens / 100, spec / 100))
        for _, _, _, sens, spec, _ in PRELIM_ROWS
    ]
    expected = [row[5] for row in PRELIM_ROWS]
    assert rendered == expected


@criterion(3, "rank-based AUROC equals brute-force pairwise enumeration", 10.0)
def test_criterion_3_auroc_oracle_equivalence():
    rng = np.random.default_rng(42)
    for _ in range(100):
        n = int(rng.integers(10, 501))
        grid = int(rng.integers(2, 14))
        probs = rng.integers(0, grid, size=n) / (grid - 1)
        labels = rng.integers(0, 2, size=n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        pos = probs[labels == 1]
        neg = probs[labels == 0]
        wins = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
        oracle = wins / (len(pos) * len(neg))
        assert auroc(ScoredSet(probs, labels)) == oracle


@criterion(4, "forward diffusion matches the iterative chain; alpha_bar monotone", 30.0)
def test_criterion_4_diffusion_correctness():
    schedule = build_noise_schedule(TINY_PROFILE.T, TINY_PROFILE.beta_start, TINY_PROFILE.beta_end)
    n = 10_000
    rng = np.random.default_rng(77)
    for t, x0 in ((12, 2.0), (TINY_PROFILE.T, -1.0)):
        closed = forward_diffuse(np.full(n, x0), t, rng.standard_normal(n), schedule)
        chain = np.full(n, x0)
        for step in range(1, t + 1):
            chain = (
                math.sqrt(1 - schedule.beta[step]) * chain
                + math.sqrt(schedule.beta[step]) * rng.standard_normal(n)
            )
        mean, var = math.sqrt(schedule.alpha_bar[t]) * x0, 1 - schedule.alpha_bar[t]
        se_mean = math.sqrt(var / n)
        se_var = var * math.sqrt(2 / (n - 1))
        for sample in (closed, chain):
            assert abs(sample.mean() - mean) <= 3 * se_mean
            assert abs(sample.var() - var) <= 3 * se_var

    sched_rng = np.random.default_rng(78)
    for _ in range(50):
        T = int(sched_rng.integers(2, 300))
        b = np.sort(sched_rng.uniform(1e-5, 0.3, size=2))
        s = build_noise_schedule(T, float(b[0]), float(b[1]))
        assert (np.diff(s.alpha_bar) < 0).all()


@criterion(5, "BCE and VAE-loss gradients match central finite differences", 5.0)
def test_criterion_5_gradient_checks():
    rng = np.random.default_rng(5)
    h = 1e-5
    for _ in range(25):
        logit = float(rng.uniform(-8, 8))
        target = float(rng.integers(0, 2))
        x = torch.tensor(logit, dtype=torch.float64, requires_grad=True)
        (grad,) = torch.autograd.grad(bce_with_logits(x, target), x)
        fd = (
            float(bce_with_logits(logit + h, target)) - float(bce_with_logits(logit - h, target))
        ) / (2 * h)
        assert abs(float(grad) - fd) / max(abs(fd), 1e-10) < 1e-4

    g = torch.Generator().manual_seed(6)
    for _ in range(25):
        x = torch.randn(1, 3, 4, 4, generator=g, dtype=torch.float64)
        recon = torch.randn(1, 3, 4, 4, generator=g, dtype=torch.float64)
        mu = torch.randn(1, 4, generator=g, dtype=torch.float64).requires_grad_()
        logvar = torch.randn(1, 4, generator=g, dtype=torch.float64).requires_grad_()
        loss = vae_loss(x, recon, mu, logvar, 0.5)
        grad_mu, grad_logvar = torch.autograd.grad(loss, [mu, logvar])
        idx = int(torch.randint(0, 4, (1,), generator=g))
        for tensor, grad in ((mu, grad_mu), (logvar, grad_logvar)):
            with torch.no_grad():
                orig = float(tensor[0, idx])
                tensor[0, idx] = orig + h
                hi = float(vae_loss(x, recon, mu, logvar, 0.5))
                tensor[0, idx] = orig - h
                lo = float(vae_loss(x, recon, mu, logvar, 0.5))
                tensor[0, idx] = orig
            fd = (hi - lo) / (2 * h)
            assert abs(float(grad[0, idx]) - fd) / max(abs(fd), 1e-10) < 1e-4


@criterion(6, "cosine restart schedule: closed form and periodicity", 1.0)
def test_criterion_6_scheduler():
    rng = np.random.default_rng(8)
    base, floor, period = 1e-4, 0.0, 5.0
    for _ in range(1000):
        e = float(rng.uniform(0, 60))
        frac = (e % period) / period
        expected = floor + 0.5 * (base - floor) * (1 + math.cos(math.pi * frac))
        lr = cosine_restart_lr(e, base, period, floor)
        assert lr == expected
        assert abs(lr - cosine_restart_lr(e + period, base, period, floor)) <= 1e-12


@criterion(7, "synthetic balancing yields near-even prevalence; real-only stays clean", 1.0)
def test_criterion_7_mixing_arithmetic():
    manifest = Manifest(mem_records(10191, 0) + mem_records(1748, 1))
    plan = stratified_kfold(manifest, 5, seed=13)
    pool = Manifest(
        [
            rec
            for fold in range(5)
            for rec in mem_records(7667, 1, "synthetic", fold, prefix=f"sy{fold}")
        ]
    )
    balanced = MixPolicy("synth_balanced", synth_pos_per_fold=7667, synth_neg_per_fold=0)
    for fold in range(5):
        train, val = training_view(manifest, plan, fold, balanced, pool)
        n_pos = train.count(1, "real") + train.count(1, "synthetic")
        prevalence = n_pos / len(train)
        assert 0.48 <= prevalence <= 0.56, (fold, prevalence)
        assert all(r.provenance == "real" for r in val)

        real_train, _ = training_view(manifest, plan, fold, MixPolicy("real_only"), pool)
        assert real_train.count(1, "synthetic") == 0
        assert real_train.count(0, "synthetic") == 0


@pytest.fixture(scope="module")
def e2e(tmp_path_factory):
    """Full desk-scale pipeline: toy data, generator, pool, both regimes, rerun."""
    start = time.perf_counter()
    root = tmp_path_factory.mktemp("e2e")
    data_dir = root / "data"
    make_toy_dataset(data_dir, n=500, positive_fraction=0.15, seed=101)
    manifest = load_manifest(data_dir / "manifest.csv")
    seed = 7

    plan = stratified_kfold(manifest, 5, seed)
    gen_config = GenStageConfig.tiny(pretrain_epochs=6, vae_epochs=3, ddpm_epochs=20)
    base = pretrain_generator(manifest, gen_config, seed)
    folds = finetune_generator(manifest, plan, base, gen_config, seed)
    pool_dir = root / "pool"
    pool_spec = SynthPoolSpec(atypical_total=1400, normal_total=25, folds=5)
    build_synth_pool(folds, pool_spec, seed, pool_dir)

    def config(regime, out_name):
        return ExperimentConfig(
            real_manifest=data_dir / "manifest.csv",
            output_dir=root / out_name,
            regime=regime,
            synth_manifest=(pool_dir / "manifest.csv") if regime == "synth_balanced" else None,
            backbone=BackboneSpec("native128_conv", 32),
            train=TrainConfig(batch_size=16, epochs=3, base_lr=1e-3),
            augment=AugmentConfig(),
            mix=MixPolicy(regime, synth_pos_per_fold=280, synth_neg_per_fold=0),
            k=5,
            seed=seed,
        )

    runs = {
        "real_only": run_cv_experiment(config("real_only", "run-real")),
        "synth_balanced": run_cv_experiment(config("synth_balanced", "run-synth")),
        "synth_repeat": run_cv_experiment(config("synth_balanced", "run-synth-repeat")),
    }
    return {"runs": runs, "plan": plan, "generators": folds, "elapsed": time.perf_counter() - start}


@criterion(8, "end-to-end toy pipeline: both regimes, AUROC > 0.90, byte-identical rerun", 600.0)
def test_criterion_8_end_to_end(e2e):
    print(f"pipeline wall time: {e2e['elapsed']:.0f}s")
    assert e2e["elapsed"] < 600.0, f"pipeline took {e2e['elapsed']:.0f}s"
    for name in ("real_only", "synth_balanced"):
        run = e2e["runs"][name]
        out = run.output_dir
        assert (out / "status.txt").read_text().strip() == "complete"
        for fold in range(5):
            assert (out / f"fold{fold}.ckpt").is_file()
            assert (out / f"fold{fold}_metrics.txt").is_file()
        assert run.summaries["auroc"].mean > 90.0, (name, run.summaries["auroc"])

    first = e2e["runs"]["synth_balanced"].output_dir
    second = e2e["runs"]["synth_repeat"].output_dir
    metric_files = [f"fold{f}_metrics.txt" for f in range(5)]
    metric_files += [f"summary_{m}.csv" for m in ("auroc", "accuracy", "sensitivity", "specificity", "balanced_accuracy")]
    for name in metric_files:
        assert (first / name).read_bytes() == (second / name).read_bytes(), name


@criterion(9, "fold-disjoint generator audit and full-scale pool quotas", 5.0)
def test_criterion_9_fold_disjointness_and_quotas(finetuned_generators, toy_plan):
    for ckpt in finetuned_generators:
        val_ids = set(toy_plan.fold_ids(ckpt.fold))
        assert set(ckpt.training_ids) & val_ids == set(), f"fold {ckpt.fold} leaked validation ids"

    spec = SynthPoolSpec(atypical_total=20000, normal_total=10191, folds=5)
    assert spec.atypical_quotas() == (4000, 4000, 4000, 4000, 4000)
    assert spec.normal_quotas() == (2039, 2038, 2038, 2038, 2038)
