import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hdmae import tensor as T
from hdmae.errors import ConfigError, ShapeError
from hdmae.patches import (
    ImageGray,
    PatchConfig,
    embed_patches,
    patchify,
    sincos_pos_embed,
    unpatchify,
)
from hdmae.rng import RngStream


def img_from(arr):
    return ImageGray.from_array(np.asarray(arr, dtype=np.float32))


class TestPatchConfig:
    def test_divisibility_enforced(self):
        with pytest.raises(ConfigError):
            PatchConfig(image_side=10, patch_side=3, embed_dim=8)

    def test_derived_quantities(self):
        cfg = PatchConfig(image_side=1280, patch_side=64, embed_dim=1024)
        assert cfg.grid_side == 20
        assert cfg.token_count == 400
        assert cfg.patch_pixels == 4096


class TestPatchify:
    def test_full_scale_shape(self):
        # 1280 px / 64 px patches -> 400 rows of 4096 values
        cfg = PatchConfig(image_side=1280, patch_side=64, embed_dim=1024)
        img = ImageGray(side=1280, pixels=np.zeros((1280, 1280), dtype=np.float32))
        assert patchify(img, cfg).shape == (400, 4096)

    def test_roundtrip_bitwise(self):
        cfg = PatchConfig(image_side=4, patch_side=2, embed_dim=4)
        img = img_from(RngStream(1).uniform((4, 4)))
        patches = patchify(img, cfg)
        assert patches.shape == (4, 4)
        back = unpatchify(patches, cfg)
        assert np.array_equal(back.pixels, img.pixels)

    def test_row_layout(self):
        # patch k covers grid cell (k // g, k % g), flattened row-major
        cfg = PatchConfig(image_side=4, patch_side=2, embed_dim=4)
        img = img_from(np.arange(16).reshape(4, 4) / 16.0)
        rows = patchify(img, cfg).data
        npt.assert_allclose(rows[1] * 16, [2, 3, 6, 7])  # top-right patch
        npt.assert_allclose(rows[2] * 16, [8, 9, 12, 13])  # bottom-left patch

    def test_constant_image(self):
        cfg = PatchConfig(image_side=6, patch_side=3, embed_dim=4)
        rows = patchify(img_from(np.full((6, 6), 0.25)), cfg).data
        assert np.all(rows == np.float32(0.25))

    def test_size_mismatch(self):
        cfg = PatchConfig(image_side=8, patch_side=2, embed_dim=4)
        with pytest.raises(ShapeError):
            patchify(img_from(np.zeros((4, 4))), cfg)
        with pytest.raises(ShapeError):
            unpatchify(np.zeros((3, 4)), cfg)

    @settings(max_examples=40, deadline=None)
    @given(gp=st.sampled_from([(2, 2), (4, 2), (3, 3), (8, 8)]), seed=st.integers(0, 1000))
    def test_roundtrip_property(self, gp, seed):
        g, p = gp
        cfg = PatchConfig(image_side=g * p, patch_side=p, embed_dim=4)
        img = img_from(RngStream(seed).uniform((g * p, g * p)))
        assert np.array_equal(unpatchify(patchify(img, cfg), cfg).pixels, img.pixels)


class TestEmbedPatches:
    def test_identity_projection(self):
        patches = T.Tensor(RngStream(2).uniform((5, 4)), dtype=np.float64)
        w = T.Tensor(np.eye(4), dtype=np.float64)
        b = T.Tensor(np.zeros(4), dtype=np.float64)
        npt.assert_array_equal(embed_patches(patches, w, b).data, patches.data)

    def test_zero_image_gives_bias(self):
        patches = T.Tensor(np.zeros((3, 4)), dtype=np.float64)
        w = T.Tensor(RngStream(3).normal((4, 6)), dtype=np.float64)
        b = T.Tensor(RngStream(4).normal(6), dtype=np.float64)
        out = embed_patches(patches, w, b)
        npt.assert_array_equal(out.data, np.tile(b.data, (3, 1)))

    def test_linearity_without_bias(self):
        w = T.Tensor(RngStream(5).normal((4, 6)), dtype=np.float64)
        b = T.Tensor(np.zeros(6), dtype=np.float64)
        x = RngStream(6).normal((3, 4))
        y = RngStream(7).normal((3, 4))
        lhs = embed_patches(T.Tensor(2.0 * x + 3.0 * y, dtype=np.float64), w, b).data
        rhs = 2.0 * embed_patches(T.Tensor(x, dtype=np.float64), w, b).data + 3.0 * embed_patches(
            T.Tensor(y, dtype=np.float64), w, b
        ).data
        npt.assert_allclose(lhs, rhs, atol=1e-5)


class TestSincos:
    def test_pure_function_of_config(self):
        cfg = PatchConfig(image_side=32, patch_side=8, embed_dim=16)
        a = sincos_pos_embed(cfg).data
        b = sincos_pos_embed(cfg).data
        assert np.array_equal(a, b)

    def test_same_grid_row_shares_row_half(self):
        cfg = PatchConfig(image_side=32, patch_side=8, embed_dim=16)  # 4x4 grid
        table = sincos_pos_embed(cfg).data
        # tokens 4 and 6 sit in grid row 1
        npt.assert_array_equal(table[4, :8], table[6, :8])
        assert not np.array_equal(table[4, 8:], table[6, 8:])

    def test_range_and_distinctness(self):
        cfg = PatchConfig(image_side=64, patch_side=8, embed_dim=32)
        table = sincos_pos_embed(cfg).data
        assert table.min() >= -1.0 and table.max() <= 1.0
        uniq = np.unique(table, axis=0)
        assert uniq.shape[0] == cfg.token_count

    def test_dim_must_divide_by_four(self):
        cfg = PatchConfig(image_side=32, patch_side=8, embed_dim=16)
        with pytest.raises(ConfigError):
            sincos_pos_embed(cfg, dim=18)


class TestImageGray:
    def test_rejects_out_of_range(self):
        with pytest.raises(ShapeError):
            ImageGray(side=2, pixels=np.array([[0.0, 1.5], [0.0, 0.0]]))

    def test_rejects_non_square(self):
        with pytest.raises(ShapeError):
            ImageGray.from_array(np.zeros((2, 3)))
