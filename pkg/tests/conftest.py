import numpy as np
import pytest
import torch

from mddnet import (
    ModelConfig,
    SynthConfig,
    TrainConfig,
    make_folds,
    make_splits,
    save_manifest,
    synth_generate,
)


def tiny_model_config(**overrides) -> ModelConfig:
    """A model small enough for sub-second forwards but exercising every part
    (multiple heads, groups, both extractor stages, pooling). Input widths stay
    at the fixed feature-file widths so it can train on generated datasets."""
    base = dict(t=16, d_a=6, d_v=8, afem_window=3,
                vfem_depths=(1, 1), vfem_strides=(1, 1), vfem_heads=2,
                vfem_groups=2, vfem_mlp_ratio=2, head_hidden=6, pool_window=3)
    base.update(overrides)
    return ModelConfig(**base)


def tiny_train_config(**overrides) -> TrainConfig:
    base = dict(lr=3e-3, weight_decay=0.01, epochs=3, patience=2, seed=1,
                batch_size=8, model=tiny_model_config())
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture()
def model_cfg() -> ModelConfig:
    return tiny_model_config()


@pytest.fixture()
def train_cfg() -> TrainConfig:
    return tiny_train_config()


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """24-sample synthetic dataset with splits and 3 folds, t=16."""
    root = tmp_path_factory.mktemp("tiny-data")
    cfg = SynthConfig(n_samples=24, t=16, latent_dim=4, seed=5)
    manifest = synth_generate(cfg, root)
    manifest = make_folds(make_splits(manifest, seed=5), k=3, seed=5)
    save_manifest(manifest, root / "manifest.json")
    return manifest


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(0)


@pytest.fixture(autouse=True)
def _torch_single_thread():
    torch.set_num_threads(1)
