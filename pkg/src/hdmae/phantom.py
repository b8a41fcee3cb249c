"""Synthetic chest phantoms and grayscale PGM I/O.

A phantom is a dark field with a bright centered chest ellipse (semi-axes
0.35 and 0.45 of the image side, horizontal and vertical), sinusoidal rib
bands inside the ellipse (period side/8 rows), mild seeded noise, and - for
lesion samples - one bright Gaussian blob (sigma side/16, amplitude +0.3)
whose center is drawn strictly inside a half-scaled copy of the ellipse. The
region grid marks a patch inside when its center pixel is inside the ellipse.
Everything is a pure function of (seed, config, lesion).
"""

from __future__ import annotations

import concurrent.futures
import csv
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError
from .masking import RegionMask
from .patches import ImageGray, PatchConfig
from .rng import PURPOSE_DATA, RngStream, sub_seed

BASE_LEVEL = 0.05
CHEST_LIFT = 0.35
RIB_AMP = 0.06
NOISE_AMP = 0.02
LESION_AMP = 0.3


@dataclass(frozen=True)
class PhantomSample:
    image: ImageGray
    region: RegionMask
    label: int  # 0 clean, 1 lesion
    seed: int


def worker_count() -> int:
    """Worker cap from HDMAE_THREADS (default: all cores)."""
    env = os.environ.get("HDMAE_THREADS", "").strip()
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"HDMAE_THREADS must be an integer, got {env!r}")
    return os.cpu_count() or 1


def _ellipse_field(side: int):
    c = (side - 1) / 2.0
    rx, ry = 0.35 * side, 0.45 * side
    yy, xx = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    e = ((yy - c) / ry) ** 2 + ((xx - c) / rx) ** 2
    return e, c, rx, ry


def synth_phantom(seed: int, cfg: PatchConfig, lesion: bool) -> PhantomSample:
    """Deterministic phantom; draws come from RngStream(seed) in a fixed
    order (noise field first, then the lesion center if any)."""
    side = cfg.image_side
    stream = RngStream(seed)
    e, c, rx, ry = _ellipse_field(side)
    inside = e <= 1.0
    img = np.full((side, side), BASE_LEVEL)
    img[inside] += CHEST_LIFT
    rib_period = side / 8.0
    yy = np.arange(side)[:, None]
    ribs = RIB_AMP * np.sin(2.0 * np.pi * yy / rib_period)
    img += np.where(inside, np.broadcast_to(ribs, (side, side)), 0.0)
    img += (stream.uniform((side, side)) - 0.5) * (2.0 * NOISE_AMP)
    if lesion:
        # rejection-sample the center inside the half-scaled ellipse
        while True:
            u = stream.uniform(2)
            y0 = c + (u[0] * 2.0 - 1.0) * 0.5 * ry
            x0 = c + (u[1] * 2.0 - 1.0) * 0.5 * rx
            if ((y0 - c) / (0.5 * ry)) ** 2 + ((x0 - c) / (0.5 * rx)) ** 2 <= 1.0:
                break
        sigma = side / 16.0
        yy2, xx2 = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
        blob = LESION_AMP * np.exp(-((yy2 - y0) ** 2 + (xx2 - x0) ** 2) / (2.0 * sigma**2))
        img += blob
    img = np.clip(img, 0.0, 1.0).astype(np.float32)
    region = region_for(cfg)
    return PhantomSample(
        image=ImageGray(side=side, pixels=img),
        region=region,
        label=1 if lesion else 0,
        seed=seed,
    )


def region_for(cfg: PatchConfig) -> RegionMask:
    """Chest-ellipse interior rasterized to the patch grid (center-pixel rule)."""
    g, p = cfg.grid_side, cfg.patch_side
    side = cfg.image_side
    c = (side - 1) / 2.0
    rx, ry = 0.35 * side, 0.45 * side
    centers = (np.arange(g) + 0.5) * p - 0.5
    cy, cx = np.meshgrid(centers, centers, indexing="ij")
    inside = ((cy - c) / ry) ** 2 + ((cx - c) / rx) ** 2 <= 1.0
    return RegionMask(grid_side=g, inside=inside.reshape(-1))


def dataset(seed: int, count: int, lesion_fraction: float, cfg: PatchConfig) -> list[PhantomSample]:
    """Deterministic shuffled phantom list.

    Sample i (pre-shuffle) uses seed+i; the first round(count*lesion_fraction)
    of those are lesions, so lesion identity is tied to the sample seed.
    Order is a seeded permutation (data-purpose sub-stream of `seed`).
    """
    if count < 1:
        raise ConfigError(f"count must be >= 1, got {count}")
    if not (0.0 <= lesion_fraction <= 1.0):
        raise ConfigError(f"lesion_fraction must be in [0, 1], got {lesion_fraction}")
    n_lesion = int(np.floor(count * lesion_fraction + 0.5))
    flags = [i < n_lesion for i in range(count)]

    def make(i: int) -> PhantomSample:
        return synth_phantom(seed + i, cfg, flags[i])

    workers = min(worker_count(), count)
    if workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            samples = list(pool.map(make, range(count)))
    else:
        samples = [make(i) for i in range(count)]
    order = RngStream(sub_seed(seed, PURPOSE_DATA)).perm(count)
    return [samples[i] for i in order]


# --------------------------------------------------------------------------
# PGM (binary P5, maxval 255)


def save_pgm(img: ImageGray, path) -> None:
    """Binary P5, maxval 255; v -> floor(v*255 + 0.5)."""
    data = np.floor(img.pixels.astype(np.float64) * 255.0 + 0.5).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.side} {img.side}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def _read_header_tokens(raw: bytes, path) -> tuple[list[bytes], int]:
    # PGM headers are whitespace-separated tokens; '#' starts a comment
    tokens = []
    i = 0
    while len(tokens) < 4:
        if i >= len(raw):
            raise FormatError(f"{path}: truncated header")
        ch = raw[i : i + 1]
        if ch == b"#":
            while i < len(raw) and raw[i : i + 1] != b"\n":
                i += 1
        elif ch.isspace():
            i += 1
        else:
            j = i
            while j < len(raw) and not raw[j : j + 1].isspace() and raw[j : j + 1] != b"#":
                j += 1
            tokens.append(raw[i:j])
            i = j
    return tokens, i + 1  # payload starts after the single whitespace byte


def load_pgm(path) -> ImageGray:
    with open(path, "rb") as fh:
        raw = fh.read()
    tokens, start = _read_header_tokens(raw, path)
    magic, w_tok, h_tok, maxval_tok = tokens
    if magic != b"P5":
        raise FormatError(f"{path}: magic {magic!r} is not binary PGM (P5)")
    try:
        w, h, maxval = int(w_tok), int(h_tok), int(maxval_tok)
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric header field") from exc
    if maxval != 255:
        raise FormatError(f"{path}: maxval {maxval} unsupported (want 255)")
    if w != h:
        raise FormatError(f"{path}: {w}x{h} image is not square")
    payload = raw[start : start + w * h]
    if len(payload) != w * h:
        raise FormatError(f"{path}: truncated payload ({len(payload)} of {w * h} bytes)")
    pixels = (np.frombuffer(payload, dtype=np.uint8).astype(np.float32) / 255.0).reshape(h, w)
    return ImageGray(side=w, pixels=pixels)


def resize_bilinear(img: ImageGray, target_side: int) -> ImageGray:
    """Bilinear resample with half-pixel-center (corner-aligned-off) sampling.

    Destination pixel x maps to source coordinate (x + 0.5)*side/target - 0.5;
    the four neighbors are clamped to the image border and blended by the
    fractional offsets. target == source reproduces the input bitwise.
    """
    if target_side < 1:
        raise ConfigError(f"target_side must be >= 1, got {target_side}")
    src = img.pixels.astype(np.float64)
    s = img.side
    scale = s / target_side
    coord = (np.arange(target_side) + 0.5) * scale - 0.5
    lo = np.floor(coord).astype(np.int64)
    frac = coord - lo
    lo0 = np.clip(lo, 0, s - 1)
    lo1 = np.clip(lo + 1, 0, s - 1)
    fy = frac[:, None]
    fx = frac[None, :]
    p00 = src[np.ix_(lo0, lo0)]
    p01 = src[np.ix_(lo0, lo1)]
    p10 = src[np.ix_(lo1, lo0)]
    p11 = src[np.ix_(lo1, lo1)]
    out = (
        p00 * (1.0 - fy) * (1.0 - fx)
        + p01 * (1.0 - fy) * fx
        + p10 * fy * (1.0 - fx)
        + p11 * fy * fx
    )
    return ImageGray(side=target_side, pixels=np.clip(out, 0.0, 1.0).astype(np.float32))


def write_manifest(samples: list[PhantomSample], out_dir, rel_paths) -> Path:
    """CSV manifest `seed,label,path,region_path` next to the written files."""
    out_dir = Path(out_dir)
    manifest = out_dir / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed", "label", "path", "region_path"])
        for s, (img_rel, reg_rel) in zip(samples, rel_paths):
            writer.writerow([s.seed, s.label, img_rel, reg_rel])
    return manifest
