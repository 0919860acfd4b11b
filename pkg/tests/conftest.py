import pytest

from atypia.data import load_manifest, stratified_kfold
from atypia.diffusion import GenStageConfig, SynthPoolSpec, build_synth_pool, finetune_generator, pretrain_generator
from atypia.toydata import make_toy_dataset


@pytest.fixture(scope="session")
def toy_dir(tmp_path_factory):
    """Small separable toy dataset shared by unit tests (60 patches, 30% positive)."""
    out = tmp_path_factory.mktemp("toy60")
    make_toy_dataset(out, n=60, positive_fraction=0.3, seed=11)
    return out


@pytest.fixture(scope="session")
def toy_manifest(toy_dir):
    return load_manifest(toy_dir / "manifest.csv")


@pytest.fixture(scope="session")
def toy_plan(toy_manifest):
    return stratified_kfold(toy_manifest, k=5, seed=3)


@pytest.fixture(scope="session")
def tiny_gen_config():
    return GenStageConfig.tiny(pretrain_epochs=4, vae_epochs=2, ddpm_epochs=8)


@pytest.fixture(scope="session")
def pretrained_generator(toy_manifest, tiny_gen_config):
    return pretrain_generator(toy_manifest, tiny_gen_config, seed=21)


@pytest.fixture(scope="session")
def finetuned_generators(toy_manifest, toy_plan, pretrained_generator, tiny_gen_config):
    return finetune_generator(toy_manifest, toy_plan, pretrained_generator, tiny_gen_config, seed=22)


@pytest.fixture(scope="session")
def toy_pool_dir(finetuned_generators, tmp_path_factory):
    """Small synthetic pool matched to the 5-fold toy plan."""
    out = tmp_path_factory.mktemp("toy-pool")
    spec = SynthPoolSpec(atypical_total=30, normal_total=10, folds=5)
    build_synth_pool(finetuned_generators, spec, seed=5, out_dir=out)
    return out
