"""Image <-> patch-token conversion and fixed positional encodings.

An image is cut into a grid of non-overlapping square patches; patch k sits
at grid position (k // grid_side, k % grid_side) and its pixels are flattened
row-major. `patchify`/`unpatchify` are exact inverses. Patch embedding is a
single linear map (equivalent to a stride-P convolution with a PxP kernel),
and positions get a deterministic 2-D sine-cosine table with no learnable
state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class PatchConfig:
    """Square image of image_side px cut into patch_side px patches."""

    image_side: int
    patch_side: int
    embed_dim: int

    def __post_init__(self):
        if self.image_side <= 0 or self.patch_side <= 0 or self.embed_dim <= 0:
            raise ConfigError(f"PatchConfig fields must be positive: {self}")
        if self.image_side % self.patch_side != 0:
            raise ConfigError(
                f"image_side {self.image_side} not divisible by patch_side {self.patch_side}"
            )

    @property
    def grid_side(self) -> int:
        return self.image_side // self.patch_side

    @property
    def token_count(self) -> int:
        return self.grid_side**2

    @property
    def patch_pixels(self) -> int:
        return self.patch_side**2


@dataclass
class ImageGray:
    """Square grayscale image with intensities in [0, 1], row-major."""

    side: int
    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels)
        if self.pixels.shape != (self.side, self.side):
            raise ShapeError(f"pixels shape {self.pixels.shape} vs side {self.side}")
        if not np.all(np.isfinite(self.pixels)):
            raise ShapeError("image pixels must be finite")
        if self.pixels.min() < 0.0 or self.pixels.max() > 1.0:
            raise ShapeError("image pixels must lie in [0, 1]")

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "ImageGray":
        arr = np.asarray(arr)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ShapeError(f"expected a square 2-d array, got {arr.shape}")
        return cls(side=arr.shape[0], pixels=arr)


def patchify(img: ImageGray, cfg: PatchConfig) -> T.Tensor:
    """Image -> [N, P^2]; row k is patch (k // g, k % g) flattened row-major."""
    if img.side != cfg.image_side:
        raise ShapeError(f"image side {img.side} vs config image_side {cfg.image_side}")
    g, p = cfg.grid_side, cfg.patch_side
    rows = img.pixels.reshape(g, p, g, p).transpose(0, 2, 1, 3).reshape(cfg.token_count, p * p)
    return T.Tensor(np.ascontiguousarray(rows))


def unpatchify(patches, cfg: PatchConfig) -> ImageGray:
    """Exact inverse of patchify."""
    arr = patches.data if isinstance(patches, T.Tensor) else np.asarray(patches)
    g, p = cfg.grid_side, cfg.patch_side
    if arr.shape != (cfg.token_count, cfg.patch_pixels):
        raise ShapeError(f"patches shape {arr.shape} vs expected {(cfg.token_count, cfg.patch_pixels)}")
    img = arr.reshape(g, g, p, p).transpose(0, 2, 1, 3).reshape(cfg.image_side, cfg.image_side)
    return ImageGray(side=cfg.image_side, pixels=np.ascontiguousarray(img))


def embed_patches(patches: T.Tensor, proj_w: T.Tensor, proj_b: T.Tensor) -> T.Tensor:
    """patches @ proj_w + proj_b; the patch-to-token linear projection."""
    return T.add_bias(T.matmul(patches, proj_w), proj_b)


def sincos_pos_embed(cfg: PatchConfig, dim: int | None = None, dtype=np.float32) -> T.Tensor:
    """Fixed 2-D sine-cosine position table, shape [N, dim].

    First dim/2 channels encode the grid row, last dim/2 the grid column.
    Within each half, channels interleave sin/cos pairs at geometric
    frequencies: pair i uses omega_i = 10000^(-i / (dim/4)), so channel 2i is
    sin(pos * omega_i) and channel 2i+1 is cos(pos * omega_i). Entries lie in
    [-1, 1]; the table is a pure function of (cfg, dim).
    """
    d = cfg.embed_dim if dim is None else dim
    if d % 4 != 0:
        raise ConfigError(f"positional embed dim must be divisible by 4, got {d}")
    g = cfg.grid_side
    quarter = d // 4
    omega = 10000.0 ** (-np.arange(quarter, dtype=np.float64) / quarter)
    pos = np.arange(g, dtype=np.float64)
    angles = pos[:, None] * omega[None, :]  # [g, quarter]
    half = np.empty((g, 2 * quarter), dtype=np.float64)
    half[:, 0::2] = np.sin(angles)
    half[:, 1::2] = np.cos(angles)
    rows = np.repeat(half, g, axis=0)  # token k -> row k // g
    cols = np.tile(half, (g, 1))  # token k -> col k % g
    table = np.concatenate([rows, cols], axis=1)
    return T.Tensor(table.astype(dtype))
