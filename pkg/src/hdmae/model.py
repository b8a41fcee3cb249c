"""Masked-autoencoder ViT: pre-norm encoder over visible tokens, decoder over
the full token set with a learnable mask token, per-pixel squared-error loss
on masked patches only.

Attention uses the per-head scale 1/sqrt(d/heads). The decoder reconstructs
all N tokens; the loss reads only masked rows, so visible-row targets never
affect it. There is no class token: downstream pooling is mean-over-tokens.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, ShapeError
from .masking import MaskPlan
from .patches import PatchConfig, sincos_pos_embed
from .rng import PURPOSE_INIT, RngStream, sub_seed


@dataclass(frozen=True)
class ViTConfig:
    patch: PatchConfig
    enc_depth: int
    enc_heads: int
    enc_dim: int
    dec_depth: int
    dec_heads: int
    dec_dim: int
    mlp_ratio: float = 4.0

    def __post_init__(self):
        if self.enc_dim % self.enc_heads != 0:
            raise ConfigError(f"enc_dim {self.enc_dim} not divisible by enc_heads {self.enc_heads}")
        if self.dec_dim % self.dec_heads != 0:
            raise ConfigError(f"dec_dim {self.dec_dim} not divisible by dec_heads {self.dec_heads}")
        if self.enc_dim % 4 != 0 or self.dec_dim % 4 != 0:
            raise ConfigError("enc_dim and dec_dim must be divisible by 4 (sincos table)")
        if self.patch.embed_dim != self.enc_dim:
            raise ConfigError(
                f"patch embed_dim {self.patch.embed_dim} must equal enc_dim {self.enc_dim}"
            )
        if self.enc_depth < 0 or self.dec_depth < 0:
            raise ConfigError("depths must be >= 0")
        if int(self.mlp_ratio * self.enc_dim) < 1 or int(self.mlp_ratio * self.dec_dim) < 1:
            raise ConfigError(f"mlp_ratio {self.mlp_ratio} yields an empty hidden layer")

    def mlp_hidden(self, dim: int) -> int:
        return int(self.mlp_ratio * dim)


@dataclass
class BlockParams:
    ln1_g: T.Tensor
    ln1_b: T.Tensor
    wq: T.Tensor
    bq: T.Tensor
    wk: T.Tensor
    bk: T.Tensor
    wv: T.Tensor
    bv: T.Tensor
    wo: T.Tensor
    bo: T.Tensor
    ln2_g: T.Tensor
    ln2_b: T.Tensor
    w1: T.Tensor
    b1: T.Tensor
    w2: T.Tensor
    b2: T.Tensor


@dataclass
class ModelParams:
    """All learnable tensors; field shapes are pure functions of the config."""

    cfg: ViTConfig
    patch_w: T.Tensor
    patch_b: T.Tensor
    enc_blocks: list[BlockParams]
    enc_norm_g: T.Tensor
    enc_norm_b: T.Tensor
    enc_to_dec_w: T.Tensor
    enc_to_dec_b: T.Tensor
    mask_token: T.Tensor
    dec_blocks: list[BlockParams]
    dec_norm_g: T.Tensor
    dec_norm_b: T.Tensor
    head_w: T.Tensor
    head_b: T.Tensor

    def named_tensors(self) -> list[tuple[str, T.Tensor, bool]]:
        """(name, tensor, weight_decay_applies), in the fixed canonical order.

        Decay applies only to 2-d weight matrices; biases, norm gains/biases,
        and the mask token are exempt.
        """
        out = [("patch.w", self.patch_w, True), ("patch.b", self.patch_b, False)]

        def block(prefix, bp):
            out.extend(
                [
                    (f"{prefix}.ln1.g", bp.ln1_g, False),
                    (f"{prefix}.ln1.b", bp.ln1_b, False),
                    (f"{prefix}.attn.wq", bp.wq, True),
                    (f"{prefix}.attn.bq", bp.bq, False),
                    (f"{prefix}.attn.wk", bp.wk, True),
                    (f"{prefix}.attn.bk", bp.bk, False),
                    (f"{prefix}.attn.wv", bp.wv, True),
                    (f"{prefix}.attn.bv", bp.bv, False),
                    (f"{prefix}.attn.wo", bp.wo, True),
                    (f"{prefix}.attn.bo", bp.bo, False),
                    (f"{prefix}.ln2.g", bp.ln2_g, False),
                    (f"{prefix}.ln2.b", bp.ln2_b, False),
                    (f"{prefix}.mlp.w1", bp.w1, True),
                    (f"{prefix}.mlp.b1", bp.b1, False),
                    (f"{prefix}.mlp.w2", bp.w2, True),
                    (f"{prefix}.mlp.b2", bp.b2, False),
                ]
            )

        for i, bp in enumerate(self.enc_blocks):
            block(f"enc.{i}", bp)
        out.extend(
            [
                ("enc.norm.g", self.enc_norm_g, False),
                ("enc.norm.b", self.enc_norm_b, False),
                ("enc_to_dec.w", self.enc_to_dec_w, True),
                ("enc_to_dec.b", self.enc_to_dec_b, False),
                ("mask_token", self.mask_token, False),
            ]
        )
        for i, bp in enumerate(self.dec_blocks):
            block(f"dec.{i}", bp)
        out.extend(
            [
                ("dec.norm.g", self.dec_norm_g, False),
                ("dec.norm.b", self.dec_norm_b, False),
                ("head.w", self.head_w, True),
                ("head.b", self.head_b, False),
            ]
        )
        return out

    def param_count(self) -> int:
        return sum(t.size for _, t, _ in self.named_tensors())


def param_count_formula(cfg: ViTConfig) -> int:
    """Closed-form parameter count; must equal ModelParams.param_count()."""

    def block(d, h):
        return 2 * d + 4 * (d * d + d) + 2 * d + (d * h + h) + (h * d + d)

    p2 = cfg.patch.patch_pixels
    e, dd = cfg.enc_dim, cfg.dec_dim
    total = p2 * e + e  # patch projection
    total += cfg.enc_depth * block(e, cfg.mlp_hidden(e))
    total += 2 * e  # encoder final norm
    total += e * dd + dd  # encoder->decoder projection
    total += dd  # mask token
    total += cfg.dec_depth * block(dd, cfg.mlp_hidden(dd))
    total += 2 * dd  # decoder final norm
    total += dd * p2 + p2  # reconstruction head
    return total


def init_params(cfg: ViTConfig, seed: int, dtype=np.float32) -> ModelParams:
    """Truncated-normal(std 0.02) weights and mask token, zero biases, unit
    norm gains; all draws come from the init stream in named-tensor order."""
    stream = RngStream(sub_seed(seed, PURPOSE_INIT))
    std = 0.02

    def w(shape):
        t = T.trunc_normal_init(shape, stream, std=std, dtype=dtype)
        t.grad_enabled = True
        return t

    def zeros(shape):
        t = T.zeros(shape, dtype=dtype)
        t.grad_enabled = True
        return t

    def ones(shape):
        t = T.ones(shape, dtype=dtype)
        t.grad_enabled = True
        return t

    def block(dim):
        h = cfg.mlp_hidden(dim)
        return BlockParams(
            ln1_g=ones(dim),
            ln1_b=zeros(dim),
            wq=w((dim, dim)),
            bq=zeros(dim),
            wk=w((dim, dim)),
            bk=zeros(dim),
            wv=w((dim, dim)),
            bv=zeros(dim),
            wo=w((dim, dim)),
            bo=zeros(dim),
            ln2_g=ones(dim),
            ln2_b=zeros(dim),
            w1=w((dim, h)),
            b1=zeros(h),
            w2=w((h, dim)),
            b2=zeros(dim),
        )

    p2, e, dd = cfg.patch.patch_pixels, cfg.enc_dim, cfg.dec_dim
    return ModelParams(
        cfg=cfg,
        patch_w=w((p2, e)),
        patch_b=zeros(e),
        enc_blocks=[block(e) for _ in range(cfg.enc_depth)],
        enc_norm_g=ones(e),
        enc_norm_b=zeros(e),
        enc_to_dec_w=w((e, dd)),
        enc_to_dec_b=zeros(dd),
        mask_token=w((dd,)),
        dec_blocks=[block(dd) for _ in range(cfg.dec_depth)],
        dec_norm_g=ones(dd),
        dec_norm_b=zeros(dd),
        head_w=w((dd, p2)),
        head_b=zeros(p2),
    )


def zeros_params(cfg: ViTConfig, dtype=np.float32) -> ModelParams:
    """All-zero parameter shell with the config's shapes; checkpoint loading
    fills it in."""

    def zt(shape):
        t = T.zeros(shape, dtype=dtype)
        t.grad_enabled = True
        return t

    def block(dim):
        h = cfg.mlp_hidden(dim)
        return BlockParams(
            ln1_g=zt(dim), ln1_b=zt(dim),
            wq=zt((dim, dim)), bq=zt(dim), wk=zt((dim, dim)), bk=zt(dim),
            wv=zt((dim, dim)), bv=zt(dim), wo=zt((dim, dim)), bo=zt(dim),
            ln2_g=zt(dim), ln2_b=zt(dim),
            w1=zt((dim, h)), b1=zt(h), w2=zt((h, dim)), b2=zt(dim),
        )

    p2, e, dd = cfg.patch.patch_pixels, cfg.enc_dim, cfg.dec_dim
    return ModelParams(
        cfg=cfg,
        patch_w=zt((p2, e)),
        patch_b=zt(e),
        enc_blocks=[block(e) for _ in range(cfg.enc_depth)],
        enc_norm_g=zt(e),
        enc_norm_b=zt(e),
        enc_to_dec_w=zt((e, dd)),
        enc_to_dec_b=zt(dd),
        mask_token=zt(dd),
        dec_blocks=[block(dd) for _ in range(cfg.dec_depth)],
        dec_norm_g=zt(dd),
        dec_norm_b=zt(dd),
        head_w=zt((dd, p2)),
        head_b=zt(p2),
    )


def attention(q: T.Tensor, k: T.Tensor, v: T.Tensor, n_heads: int) -> T.Tensor:
    """Multi-head scaled dot-product attention on [..., n, d] tensors.

    Per head: softmax(q k^T / sqrt(d/heads)) v; heads are concatenated. The
    output projection is applied by the caller's block.
    """
    d = q.shape[-1]
    if d % n_heads != 0:
        raise ConfigError(f"dim {d} not divisible by heads {n_heads}")
    if q.shape != k.shape or q.shape != v.shape:
        raise ShapeError(f"attention shapes differ: {q.shape}, {k.shape}, {v.shape}")
    n = q.shape[-2]
    c = d // n_heads
    lead = q.shape[:-2]

    def split(t):
        t = T.reshape(t, lead + (n, n_heads, c))
        return T.swap_axes(t, -2, -3)  # [..., heads, n, c]

    qh, kh, vh = split(q), split(k), split(v)
    scores = T.scale(T.matmul(qh, T.transpose_last_two(kh)), 1.0 / np.sqrt(c))
    att = T.softmax_lastdim(scores)
    ctx = T.matmul(att, vh)  # [..., heads, n, c]
    ctx = T.swap_axes(ctx, -2, -3)
    return T.reshape(ctx, lead + (n, d))


def _block_forward(bp: BlockParams, x: T.Tensor, n_heads: int) -> T.Tensor:
    # pre-norm: x += Attn(LN(x)); x += MLP(LN(x))
    h = T.layer_norm(x, bp.ln1_g, bp.ln1_b)
    q = T.add_bias(T.matmul(h, bp.wq), bp.bq)
    k = T.add_bias(T.matmul(h, bp.wk), bp.bk)
    v = T.add_bias(T.matmul(h, bp.wv), bp.bv)
    a = attention(q, k, v, n_heads)
    x = T.add(x, T.add_bias(T.matmul(a, bp.wo), bp.bo))
    h2 = T.layer_norm(x, bp.ln2_g, bp.ln2_b)
    m = T.add_bias(T.matmul(T.gelu(T.add_bias(T.matmul(h2, bp.w1), bp.b1)), bp.w2), bp.b2)
    return T.add(x, m)


def encoder_forward(params: ModelParams, x: T.Tensor) -> T.Tensor:
    """Pre-norm encoder blocks then a final norm; shape-preserving."""
    for bp in params.enc_blocks:
        x = _block_forward(bp, x, params.cfg.enc_heads)
    return T.layer_norm(x, params.enc_norm_g, params.enc_norm_b)


def _plan_index_matrix(plans: list[MaskPlan], which: str) -> np.ndarray:
    rows = [getattr(p, which) for p in plans]
    return np.stack(rows, axis=0)


def decoder_forward(
    params: ModelParams, latents: T.Tensor, plans: list[MaskPlan] | MaskPlan, dec_pos: T.Tensor
) -> T.Tensor:
    """Project latents to decoder width, scatter them to their original token
    slots, fill masked slots with the mask token, add decoder positions, run
    the decoder blocks, and map every token to P^2 pixels."""
    single = isinstance(plans, MaskPlan)
    plan_list = [plans] if single else list(plans)
    n = plan_list[0].n_tokens
    m = plan_list[0].n_visible
    expect = (m, params.cfg.enc_dim) if single else (len(plan_list), m, params.cfg.enc_dim)
    if latents.shape != expect:
        raise ContractError(f"latents shape {latents.shape} does not match plans ({expect})")
    lat = T.add_bias(T.matmul(latents, params.enc_to_dec_w), params.enc_to_dec_b)
    vis_idx = _plan_index_matrix(plan_list, "visible")
    x = T.assemble_rows(lat, vis_idx[0] if single else vis_idx, n, params.mask_token)
    x = T.add(x, dec_pos)
    for bp in params.dec_blocks:
        x = _block_forward(bp, x, params.cfg.dec_heads)
    x = T.layer_norm(x, params.dec_norm_g, params.dec_norm_b)
    return T.add_bias(T.matmul(x, params.head_w), params.head_b)


def mae_loss(pred: T.Tensor, target: T.Tensor, plans: list[MaskPlan] | MaskPlan) -> T.Tensor:
    """Mean over masked tokens of per-pixel squared error.

    (1/|masked|) * sum_{i in masked} (1/P^2) * ||pred_i - target_i||^2,
    averaged over the batch. Rows at visible indices never contribute.
    """
    single = isinstance(plans, MaskPlan)
    plan_list = [plans] if single else list(plans)
    if pred.shape != target.shape:
        raise ShapeError(f"pred {pred.shape} vs target {target.shape}")
    if any(p.n_masked == 0 for p in plan_list):
        raise ContractError("mae_loss needs a non-empty masked set")
    masked_idx = _plan_index_matrix(plan_list, "masked")
    if single:
        diff = T.sub(T.gather_rows(pred, masked_idx[0]), T.gather_rows(target, masked_idx[0]))
    else:
        diff = T.sub(
            T.gather_rows_batched(pred, masked_idx), T.gather_rows_batched(target, masked_idx)
        )
    return T.mean(T.mul(diff, diff))


def pretrain_forward(
    params: ModelParams,
    patches: T.Tensor,
    plans: list[MaskPlan],
    enc_pos: T.Tensor,
    dec_pos: T.Tensor,
) -> tuple[T.Tensor, T.Tensor]:
    """Full masked-autoencoder step on a [B, N, P^2] patch batch.

    Returns (pred [B, N, P^2], scalar loss). Position tables come from
    `pos_tables`; plans must share one (N, ratio).
    """
    if patches.ndim != 3 or len(plans) != patches.shape[0]:
        raise ContractError(f"patches {patches.shape} need one plan per batch row")
    tokens = T.add(
        T.add_bias(T.matmul(patches, params.patch_w), params.patch_b), enc_pos
    )
    vis_idx = _plan_index_matrix(plans, "visible")
    visible = T.gather_rows_batched(tokens, vis_idx)
    latents = encoder_forward(params, visible)
    pred = decoder_forward(params, latents, plans, dec_pos)
    return pred, mae_loss(pred, patches, plans)


def pos_tables(cfg: ViTConfig, dtype=np.float32) -> tuple[T.Tensor, T.Tensor]:
    """(encoder, decoder) fixed position tables for this config."""
    return (
        sincos_pos_embed(cfg.patch, dim=cfg.enc_dim, dtype=dtype),
        sincos_pos_embed(cfg.patch, dim=cfg.dec_dim, dtype=dtype),
    )


def forward_shapes(cfg: ViTConfig, ratio: float = 0.75) -> dict[str, tuple]:
    """Symbolic shape walk of one masked forward pass (no arrays allocated)."""
    from .masking import mask_count

    n = cfg.patch.token_count
    m_masked = mask_count(n, ratio)
    m_vis = n - m_masked
    return {
        "patches": (n, cfg.patch.patch_pixels),
        "tokens": (n, cfg.enc_dim),
        "visible_tokens": (m_vis, cfg.enc_dim),
        "latents": (m_vis, cfg.enc_dim),
        "decoder_input": (n, cfg.dec_dim),
        "reconstruction": (n, cfg.patch.patch_pixels),
    }
