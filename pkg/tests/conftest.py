"""Shared fixtures: a reduced architecture and on-disk datasets."""

import numpy as np
import pytest

from iterseg import data, model
from iterseg.config import RunConfig


@pytest.fixture(scope="session")
def default_dataset(tmp_path_factory):
    """The full default-configuration dataset (a few seconds to build)."""
    cfg = RunConfig()
    out = tmp_path_factory.mktemp("default_ds")
    data.build_dataset(cfg.dataset_spec(), seed=cfg.data_seed, out_dir=out)
    return data.load_dataset(out)


@pytest.fixture(scope="session")
def tiny_arch():
    return model.ArchDescriptor(
        patch_size=16,
        heatmap_size=8,
        num_categories=3,
        block_channels=(4, 6, 8),
        block_strides=(2, 2, 2),
        head_width=8,
    )


@pytest.fixture(scope="session")
def tiny_net(tiny_arch):
    return model.init_params(tiny_arch, seed=11)


@pytest.fixture(scope="session")
def tiny_spec():
    scene = data.SceneConfig(
        scene_size=64,
        num_categories=3,
        min_instances=2,
        max_instances=3,
        abut_rate=0.7,
        min_visible_fraction=0.4,
    )
    return data.DatasetSpec(scene=scene, num_scenes=12, val_fraction=0.25,
                            jitter_count=1, patch_size=16, heatmap_size=8)


@pytest.fixture(scope="session")
def tiny_dataset(tiny_spec, tmp_path_factory):
    root = tmp_path_factory.mktemp("tinyds")
    data.build_dataset(tiny_spec, seed=5, out_dir=root)
    return data.LoadedDataset(root)


def random_bool_mask(rng: np.random.Generator, size: int, p: float = 0.3):
    return rng.random((size, size)) < p
