import numpy as np
import pytest

from hdit.model import ModelConfig
from hdit.rng import INIT, RngStream


@pytest.fixture
def toy_cfg():
    """Smallest 2-level config with a non-reference core size."""
    return ModelConfig(input_size=16, patch_size=2, widths=[16, 32],
                       depths=[1, 1], attn_kinds=["neighborhood", "global"],
                       kernel_size=3, head_dim=8, mapping_width=32,
                       num_classes=2, allow_nonstandard_core=True)


def randn(seed, shape, dtype=np.float64):
    return RngStream(seed, INIT).normal(shape, dtype=np.float64).astype(dtype)


@pytest.fixture
def rnd():
    return randn
