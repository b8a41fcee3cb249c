import numpy as np
import pytest

from hdmae.model import ViTConfig, init_params
from hdmae.patches import PatchConfig


@pytest.fixture(scope="session")
def toy_patch_cfg():
    return PatchConfig(image_side=64, patch_side=8, embed_dim=64)


@pytest.fixture(scope="session")
def toy_vit_cfg(toy_patch_cfg):
    return ViTConfig(
        patch=toy_patch_cfg,
        enc_depth=4,
        enc_heads=4,
        enc_dim=64,
        dec_depth=2,
        dec_heads=4,
        dec_dim=32,
    )


@pytest.fixture(scope="session")
def mini_vit_cfg():
    # smallest config that still runs every code path
    return ViTConfig(
        patch=PatchConfig(image_side=16, patch_side=4, embed_dim=16),
        enc_depth=1,
        enc_heads=2,
        enc_dim=16,
        dec_depth=1,
        dec_heads=2,
        dec_dim=16,
    )


@pytest.fixture()
def mini_params(mini_vit_cfg):
    return init_params(mini_vit_cfg, seed=3)


@pytest.fixture(scope="session")
def np_rng():
    return np.random.default_rng(20240817)
