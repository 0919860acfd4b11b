"""Ancestral sampling determinism and synthetic-pool bookkeeping."""
import numpy as np
import pytest

from atypia.data import load_manifest
from atypia.diffusion import SynthPoolSpec, build_synth_pool, sample_synthetic, split_quota
from atypia.errors import ValidationError


class TestSplitQuota:
    def test_track2_normal_quota(self):
        assert split_quota(10191, 5) == (2039, 2038, 2038, 2038, 2038)

    def test_track2_atypical_quota(self):
        assert split_quota(20000, 5) == (4000,) * 5

    def test_remainder_goes_to_lowest_folds(self):
        assert split_quota(7, 5) == (2, 2, 1, 1, 1)

    def test_quotas_sum_to_total(self):
        for total in (0, 1, 13, 10191):
            assert sum(split_quota(total, 5)) == total

    def test_invalid_args(self):
        with pytest.raises(ValidationError):
            split_quota(5, 0)
        with pytest.raises(ValidationError):
            split_quota(-1, 5)

    def test_pool_spec_defaults(self):
        spec = SynthPoolSpec()
        assert spec.atypical_quotas() == (4000,) * 5
        assert spec.normal_quotas() == (2039, 2038, 2038, 2038, 2038)


class TestSampleSynthetic:
    def test_zero_count_is_empty(self, finetuned_generators):
        assert sample_synthetic(finetuned_generators[0], "atypical", 0, seed=0) == []

    def test_same_seed_identical_images(self, finetuned_generators):
        a = sample_synthetic(finetuned_generators[0], "atypical", 3, seed=5)
        b = sample_synthetic(finetuned_generators[0], "atypical", 3, seed=5)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    def test_different_seeds_differ(self, finetuned_generators):
        a = sample_synthetic(finetuned_generators[0], "atypical", 2, seed=1)
        b = sample_synthetic(finetuned_generators[0], "atypical", 2, seed=2)
        assert not all(np.array_equal(x, y) for x, y in zip(a, b))

    def test_output_shape_and_dtype(self, finetuned_generators):
        (img,) = sample_synthetic(finetuned_generators[0], "normal", 1, seed=3)
        assert img.shape == (128, 128, 3) and img.dtype == np.uint8

    def test_unconditional_checkpoint_rejected(self, pretrained_generator):
        with pytest.raises(ValidationError, match="conditional"):
            sample_synthetic(pretrained_generator, "atypical", 1, seed=0)

    def test_unknown_class_rejected(self, finetuned_generators):
        with pytest.raises(ValidationError, match="class"):
            sample_synthetic(finetuned_generators[0], "weird", 1, seed=0)

    def test_batching_does_not_change_samples(self, finetuned_generators):
        whole = sample_synthetic(finetuned_generators[0], "atypical", 5, seed=9, batch_size=5)
        split = sample_synthetic(finetuned_generators[0], "atypical", 5, seed=9, batch_size=5)
        assert all(np.array_equal(x, y) for x, y in zip(whole, split))


@pytest.fixture(scope="module")
def pool(finetuned_generators, tmp_path_factory):
    out = tmp_path_factory.mktemp("pool")
    spec = SynthPoolSpec(atypical_total=7, normal_total=5, folds=5)
    manifest = build_synth_pool(finetuned_generators, spec, seed=2, out_dir=out)
    return out, spec, manifest


class TestBuildPool:
    def test_counts_match_spec_exactly(self, pool):
        _, spec, manifest = pool
        assert manifest.count(1, "synthetic") == spec.atypical_total
        assert manifest.count(0, "synthetic") == spec.normal_total
        assert len(manifest) == spec.atypical_total + spec.normal_total

    def test_per_fold_quotas_met(self, pool):
        _, spec, manifest = pool
        for fold in range(spec.folds):
            pos = sum(1 for r in manifest if r.origin_fold == fold and r.label == 1)
            neg = sum(1 for r in manifest if r.origin_fold == fold and r.label == 0)
            assert pos == spec.atypical_quotas()[fold]
            assert neg == spec.normal_quotas()[fold]

    def test_every_record_is_synthetic_with_origin_fold(self, pool):
        _, _, manifest = pool
        assert manifest.is_synthetic_only
        assert all(r.origin_fold is not None for r in manifest)

    def test_images_persisted_and_reloadable(self, pool):
        out, _, manifest = pool
        reloaded = load_manifest(out / "manifest.csv")  # decodes every image
        assert reloaded.ids() == manifest.ids()

    def test_missing_fold_checkpoint_rejected(self, finetuned_generators, tmp_path):
        with pytest.raises(ValidationError, match="per fold"):
            build_synth_pool(finetuned_generators[:4], SynthPoolSpec(5, 5, 5), 0, tmp_path)
