"""Random and context-aware token masking.

Masked sets are drawn by Gumbel-top-k weighted sampling without replacement:
token i gets key ln(w_i) + G_i with iid standard Gumbel noise G_i from the
caller's stream, and the M largest keys are masked. Weights are `inside_weight`
for tokens inside the chest-region grid and 1 outside, so the global masked
count M = clamp(round(r*N), 1, N-1) is exact for every draw regardless of the
weight; the weight only shifts *where* masks fall. With all weights equal this
reduces to uniform sampling over size-M subsets, and `random_mask` consumes
the stream identically, so w=1 context-aware plans equal random plans
bit-for-bit on the same stream.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, FormatError
from .rng import RngStream


@dataclass(frozen=True)
class RegionMask:
    """Per-patch boolean grid; True marks patches inside the chest contour."""

    grid_side: int
    inside: np.ndarray  # flat bool [grid_side**2], row-major over the grid

    def __post_init__(self):
        arr = np.asarray(self.inside, dtype=bool).reshape(-1)
        if arr.size != self.grid_side**2:
            raise ConfigError(
                f"region length {arr.size} != grid_side^2 = {self.grid_side ** 2}"
            )
        object.__setattr__(self, "inside", arr)

    @property
    def n_inside(self) -> int:
        return int(self.inside.sum())

    def grid(self) -> np.ndarray:
        return self.inside.reshape(self.grid_side, self.grid_side)


@dataclass(frozen=True)
class MaskPlan:
    """Exact masked/visible partition of token indices 0..N-1."""

    n_tokens: int
    masked: np.ndarray  # sorted int64
    visible: np.ndarray  # sorted int64
    mask_ratio: float

    def __post_init__(self):
        m = np.asarray(self.masked, dtype=np.int64)
        v = np.asarray(self.visible, dtype=np.int64)
        object.__setattr__(self, "masked", m)
        object.__setattr__(self, "visible", v)
        if m.size + v.size != self.n_tokens:
            raise ConfigError("masked and visible must partition the token set")
        union = np.concatenate([m, v])
        if np.unique(union).size != self.n_tokens or union.min() < 0 or union.max() >= self.n_tokens:
            raise ConfigError("masked/visible must cover 0..N-1 without overlap")

    @property
    def n_masked(self) -> int:
        return int(self.masked.size)

    @property
    def n_visible(self) -> int:
        return int(self.visible.size)


def mask_count(n_tokens: int, ratio: float) -> int:
    """clamp(round(r*N), 1, N-1), round half up."""
    return int(min(max(int(np.floor(ratio * n_tokens + 0.5)), 1), n_tokens - 1))


def _check_ratio_weight(ratio: float, weight: float):
    if not (0.0 < ratio < 1.0):
        raise ConfigError(f"mask ratio must be in (0, 1), got {ratio}")
    if weight < 1.0:
        raise ConfigError(f"inside_weight must be >= 1, got {weight}")


def context_aware_mask(
    region: RegionMask, ratio: float, inside_weight: float, rng: RngStream
) -> MaskPlan:
    """One weighted mask plan: inside-region tokens are masked more often."""
    return draw_plans(region.grid_side**2, ratio, rng, 1, region=region, inside_weight=inside_weight)[0]


def random_mask(n_tokens: int, ratio: float, rng: RngStream) -> MaskPlan:
    """Uniform mask plan; context_aware_mask with all weights equal to 1."""
    return draw_plans(n_tokens, ratio, rng, 1)[0]


def masked_matrix(
    n_tokens: int,
    ratio: float,
    rng: RngStream,
    count: int,
    region: RegionMask | None = None,
    inside_weight: float = 1.0,
) -> np.ndarray:
    """Boolean [count, N] matrix of masked slots; the sampler core.

    One Gumbel key per (draw, token), consumed row-major, so `count` batched
    draws equal `count` sequential single draws on the same stream.
    """
    _check_ratio_weight(ratio, inside_weight)
    if n_tokens < 2:
        raise ConfigError(f"need at least 2 tokens to mask, got {n_tokens}")
    log_w = np.zeros(n_tokens)
    if region is not None:
        if region.grid_side**2 != n_tokens:
            raise ConfigError(f"region for {region.grid_side ** 2} tokens used with N={n_tokens}")
        if inside_weight > 1.0:
            n_in = region.n_inside
            if n_in == 0 or n_in == n_tokens:
                warnings.warn(
                    "region is all-inside or all-outside; weighted masking degenerates to uniform",
                    stacklevel=2,
                )
            log_w = np.where(region.inside, np.log(inside_weight), 0.0)
    keys = rng.gumbel((count, n_tokens)) + log_w
    m = mask_count(n_tokens, ratio)
    # stable sort on -keys: deterministic even under (measure-zero) ties
    order = np.argsort(-keys, axis=-1, kind="stable")
    hit = np.zeros((count, n_tokens), dtype=bool)
    np.put_along_axis(hit, order[:, :m], True, axis=1)
    return hit


def draw_plans(
    n_tokens: int,
    ratio: float,
    rng: RngStream,
    count: int,
    region: RegionMask | None = None,
    inside_weight: float = 1.0,
) -> list[MaskPlan]:
    """Draw `count` plans in one batch (see masked_matrix for stream order)."""
    hit = masked_matrix(n_tokens, ratio, rng, count, region=region, inside_weight=inside_weight)
    return [
        MaskPlan(
            n_tokens=n_tokens,
            masked=np.flatnonzero(row),
            visible=np.flatnonzero(~row),
            mask_ratio=ratio,
        )
        for row in hit
    ]


def default_contour(grid_side: int, cover: float) -> RegionMask:
    """Centered-disc fallback region covering about `cover` of the grid.

    Patches are ranked by squared distance to the grid center; whole
    equal-distance classes are included until the inside count is closest to
    cover * grid_side^2 (ties resolved toward the smaller count). Including
    only complete distance classes keeps the region mirror-symmetric.
    """
    if not (0.0 < cover < 1.0):
        raise ConfigError(f"cover must be in (0, 1), got {cover}")
    g = grid_side
    c = (g - 1) / 2.0
    ii, jj = np.meshgrid(np.arange(g), np.arange(g), indexing="ij")
    d2 = (ii - c) ** 2 + (jj - c) ** 2
    target = cover * g * g
    levels = np.unique(d2)
    counts = np.array([(d2 <= lv).sum() for lv in levels])
    best = counts[np.argmin(np.abs(counts - target))]
    # argmin picks the first (smaller) count on ties
    inside = d2 <= levels[np.searchsorted(counts, best)]
    return RegionMask(grid_side=g, inside=inside.reshape(-1))


@dataclass
class MaskStats:
    """Monte-Carlo summary of a batch of mask plans against one region."""

    draws: int
    inside_rate: float
    outside_rate: float
    inside_se: float
    outside_se: float
    freq: np.ndarray = field(repr=False)  # [g, g] per-patch mask frequency

    @property
    def mean_masked_frac(self) -> float:
        return float(self.freq.mean())


def mask_stats(plans: list[MaskPlan], region: RegionMask) -> MaskStats:
    """Per-plan masked fraction inside vs outside, and per-patch frequencies."""
    if not plans:
        raise ConfigError("mask_stats needs at least one plan")
    g = region.grid_side
    n = g * g
    inside = region.inside
    n_in = inside.sum()
    n_out = n - n_in
    counts = np.zeros(n, dtype=np.int64)
    in_fracs = np.empty(len(plans))
    out_fracs = np.empty(len(plans))
    for i, plan in enumerate(plans):
        if plan.n_tokens != n:
            raise ConfigError(f"plan for N={plan.n_tokens} used with grid of {n} patches")
        hit = np.zeros(n, dtype=bool)
        hit[plan.masked] = True
        counts += hit
        in_fracs[i] = (hit & inside).sum() / n_in if n_in else 0.0
        out_fracs[i] = (hit & ~inside).sum() / n_out if n_out else 0.0
    draws = len(plans)

    def se(xs):
        return float(xs.std(ddof=1) / np.sqrt(draws)) if draws > 1 else 0.0

    return MaskStats(
        draws=draws,
        inside_rate=float(in_fracs.mean()),
        outside_rate=float(out_fracs.mean()),
        inside_se=se(in_fracs),
        outside_se=se(out_fracs),
        freq=(counts / draws).reshape(g, g),
    )


def save_region(region: RegionMask, path) -> None:
    """Text format: header `REGION <grid_side>`, then one '0'/'1' line per row."""
    lines = [f"REGION {region.grid_side}"]
    grid = region.grid()
    for row in grid:
        lines.append("".join("1" if v else "0" for v in row))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_region(path) -> RegionMask:
    with open(path, "r", encoding="ascii") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or not lines[0].startswith("REGION "):
        raise FormatError(f"{path}: missing REGION header")
    try:
        g = int(lines[0].split()[1])
    except (IndexError, ValueError) as exc:
        raise FormatError(f"{path}: malformed REGION header") from exc
    rows = [ln for ln in lines[1:] if ln]
    if len(rows) != g:
        raise FormatError(f"{path}: expected {g} grid rows, found {len(rows)}")
    grid = np.empty((g, g), dtype=bool)
    for i, row in enumerate(rows):
        if len(row) != g or set(row) - {"0", "1"}:
            raise FormatError(f"{path}: row {i} must be {g} chars of 0/1")
        grid[i] = [ch == "1" for ch in row]
    return RegionMask(grid_side=g, inside=grid.reshape(-1))
