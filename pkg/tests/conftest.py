import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from vesselgan.config import RunConfig  # noqa: E402
from vesselgan.synthetic import write_dataset  # noqa: E402

TINY = """
generator.depth = 3
generator.base_channels = 8
discriminator.depth = 2
discriminator.base_channels = 8
patch.size = 32
patch.stride = 16
patch.per_image = 2
train.epochs = 2
train.batch_size = 2
"""


def tiny_config(**overrides):
    cfg = RunConfig.from_text(TINY)
    for key, value in overrides.items():
        cfg.set(key.replace("__", "."), str(value))
    return cfg.validate()


@pytest.fixture
def tiny_cfg():
    return tiny_config()


@pytest.fixture(scope="session")
def dataset_root(tmp_path_factory):
    """Three 64x64 synthetic fundus images with labels and masks."""
    root = tmp_path_factory.mktemp("dataset")
    write_dataset(str(root), n=3, h=64, w=64, seed=11)
    return str(root)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
