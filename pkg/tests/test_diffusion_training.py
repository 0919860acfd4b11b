"""Diffusion training-step oracles and the two-stage training protocol."""
import math

import numpy as np
import pytest
import torch

from atypia.data import Manifest
from atypia.diffusion import (
    ConvVae,
    GenStageConfig,
    build_noise_schedule,
    ddpm_training_step,
    finetune_generator,
    images_to_tensor,
    pretrain_generator,
    sample_synthetic,
)
from atypia.data import load_manifest, stratified_kfold
from atypia.errors import ValidationError
from atypia.toydata import make_toy_dataset


class _FakeCodec:
    """Deterministic stand-in codec: latent = strided slice of the image."""

    def encode(self, images):
        z = images[:, :2, ::2, ::2].contiguous()
        return z, torch.zeros_like(z)


class _InvertingDenoiser:
    """Oracle that recovers the exact injected noise from (z_t, t) and known z0."""

    def __init__(self, z0, schedule):
        self.z0 = z0
        self.schedule = schedule

    def __call__(self, z_t, t, labels=None):
        ab = torch.tensor(
            [self.schedule.alpha_bar[int(s)] for s in t], dtype=z_t.dtype
        ).view(-1, 1, 1, 1)
        return (z_t - torch.sqrt(ab) * self.z0) / torch.sqrt(1.0 - ab)


class _ZeroDenoiser:
    def __call__(self, z_t, t, labels=None):
        return torch.zeros_like(z_t)


class TestTrainingStep:
    def test_exact_noise_oracle_gives_zero_loss(self):
        schedule = build_noise_schedule(20, 0.05, 0.3)
        images = torch.randn(8, 3, 16, 16, generator=torch.Generator().manual_seed(0))
        codec = _FakeCodec()
        z0, _ = codec.encode(images)
        oracle = _InvertingDenoiser(z0, schedule)
        loss = ddpm_training_step(oracle, codec, images, schedule, torch.Generator().manual_seed(1))
        assert float(loss) < 1e-9

    def test_zero_denoiser_loss_is_unit_noise_variance(self):
        schedule = build_noise_schedule(20, 1e-3, 0.2)
        images = torch.randn(64, 3, 16, 16, generator=torch.Generator().manual_seed(2))
        loss = ddpm_training_step(
            _ZeroDenoiser(), _FakeCodec(), images, schedule, torch.Generator().manual_seed(3)
        )
        n = 64 * 2 * 8 * 8
        assert abs(float(loss) - 1.0) <= 3 * math.sqrt(2.0 / n)

    def test_identical_rng_gives_identical_loss(self):
        schedule = build_noise_schedule(10, 1e-3, 0.2)
        images = torch.randn(4, 3, 16, 16, generator=torch.Generator().manual_seed(4))
        losses = [
            float(
                ddpm_training_step(
                    _ZeroDenoiser(), _FakeCodec(), images, schedule, torch.Generator().manual_seed(9)
                )
            )
            for _ in range(2)
        ]
        assert losses[0] == losses[1]

    def test_empty_batch_rejected(self):
        schedule = build_noise_schedule(10, 1e-3, 0.2)
        with pytest.raises(ValidationError):
            ddpm_training_step(
                _ZeroDenoiser(), _FakeCodec(), torch.zeros(0, 3, 16, 16), schedule,
                torch.Generator().manual_seed(0),
            )

    def test_wrong_shape_denoiser_rejected(self):
        schedule = build_noise_schedule(10, 1e-3, 0.2)

        class Wrong:
            def __call__(self, z_t, t, labels=None):
                return z_t[:, :1]

        with pytest.raises(ValidationError, match="shape"):
            ddpm_training_step(
                Wrong(), _FakeCodec(), torch.randn(2, 3, 16, 16), schedule,
                torch.Generator().manual_seed(0),
            )


class TestPretrain:
    def test_smoke_contract(self, toy_manifest, tiny_gen_config):
        small = Manifest(toy_manifest.records[:8])
        config = GenStageConfig.tiny(pretrain_epochs=1, vae_epochs=1, ddpm_epochs=1)
        ckpt = pretrain_generator(small, config, seed=5)
        assert not ckpt.conditional and ckpt.fold is None
        assert len(ckpt.loss_history["vae"]) == 1 and len(ckpt.loss_history["ddpm"]) == 1
        assert all(math.isfinite(v) for v in ckpt.loss_history["vae"] + ckpt.loss_history["ddpm"])
        assert ckpt.training_ids == small.ids()
        assert ckpt.config_fingerprint == config.fingerprint()

    def test_same_seed_gives_identical_loss_series(self, toy_manifest):
        small = Manifest(toy_manifest.records[:8])
        config = GenStageConfig.tiny(pretrain_epochs=2, vae_epochs=1, ddpm_epochs=1)
        a = pretrain_generator(small, config, seed=17)
        b = pretrain_generator(small, config, seed=17)
        assert a.loss_history == b.loss_history

    def test_empty_manifest_rejected(self, tiny_gen_config):
        with pytest.raises(ValidationError):
            pretrain_generator(Manifest([]), tiny_gen_config, seed=0)

    def test_reconstruction_improves_on_held_out_images(self, tmp_path):
        make_toy_dataset(tmp_path, n=120, positive_fraction=0.5, seed=31)
        manifest = load_manifest(tmp_path / "manifest.csv")
        train = Manifest(manifest.records[:96])
        held_out = images_to_tensor(Manifest(manifest.records[96:]))

        def recon_error(vae):
            with torch.no_grad():
                mu, _ = vae.encode(held_out)
                return float((vae.decode(mu) - held_out).pow(2).mean())

        config = GenStageConfig.tiny(pretrain_epochs=12, vae_epochs=1, ddpm_epochs=1)
        torch.manual_seed(0)
        untrained = ConvVae(
            config.image_side,
            config.profile.latent_side,
            config.profile.latent_channels,
            config.profile.vae_base_channels,
        )
        before = recon_error(untrained)
        ckpt = pretrain_generator(train, config, seed=13)
        after = recon_error(ckpt.vae)
        assert after < 0.5 * before


class TestFinetune:
    def test_five_distinct_fold_tags(self, finetuned_generators):
        assert [c.fold for c in finetuned_generators] == [0, 1, 2, 3, 4]
        assert all(c.conditional for c in finetuned_generators)

    def test_training_ids_never_touch_fold_validation(self, finetuned_generators, toy_plan):
        for ckpt in finetuned_generators:
            val_ids = set(toy_plan.fold_ids(ckpt.fold))
            assert set(ckpt.training_ids) & val_ids == set()
            assert set(ckpt.training_ids) | val_ids == set(toy_plan.assignment)

    def test_real_only_precondition(self, toy_plan, pretrained_generator, tiny_gen_config):
        from util import mem_records

        synth = Manifest(mem_records(6, 1, "synthetic", 0))
        with pytest.raises(ValidationError, match="real-only"):
            finetune_generator(synth, toy_plan, pretrained_generator, tiny_gen_config, seed=0)

    def test_incompatible_base_rejected(self, toy_manifest, toy_plan, pretrained_generator):
        wrong = GenStageConfig.tiny()
        from dataclasses import replace

        wrong = replace(wrong, profile=replace(wrong.profile, latent_side=16))
        with pytest.raises(ValidationError, match="latent shape"):
            finetune_generator(toy_manifest, toy_plan, pretrained_generator, wrong, seed=0)

    def test_plan_must_cover_manifest(self, toy_manifest, pretrained_generator, tiny_gen_config):
        partial = stratified_kfold(Manifest(toy_manifest.records[:30]), 5, 3)
        with pytest.raises(ValidationError, match="cover"):
            finetune_generator(toy_manifest, partial, pretrained_generator, tiny_gen_config, seed=0)


class TestConditionalGeneration:
    def test_class_conditional_means_separate_in_the_right_direction(self, tmp_path):
        # Bright positives vs dim negatives: after fine-tuning, samples
        # conditioned on 'atypical' must decode brighter than 'normal' ones.
        make_toy_dataset(tmp_path, n=40, positive_fraction=0.5, seed=41)
        manifest = load_manifest(tmp_path / "manifest.csv")
        plan = stratified_kfold(manifest, k=2, seed=1)
        config = GenStageConfig.tiny(pretrain_epochs=8, vae_epochs=3, ddpm_epochs=35)
        base = pretrain_generator(manifest, config, seed=51)
        ckpt = finetune_generator(manifest, plan, base, config, seed=52)[0]

        bright = sample_synthetic(ckpt, "atypical", 24, seed=61)
        dim = sample_synthetic(ckpt, "normal", 24, seed=62)
        bright_mean = np.mean([img.mean() for img in bright])
        dim_mean = np.mean([img.mean() for img in dim])
        assert bright_mean > dim_mean + 20.0
