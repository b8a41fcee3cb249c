"""AdamW pre-training loop with LR scheduling, metric logging, and bit-exact
checkpointing.

Determinism contract: given (config, seed, dataset), every logged value except
the wall-clock `seconds` column and every checkpoint byte are reproducible.
All randomness flows from the run seed through the documented sub-streams
(see `hdmae.rng`): parameter init, mask plans, and batch order each own one.

Checkpoint file layout (little-endian):
  bytes 0..7    magic `HDMAE001`
  bytes 8..15   uint64 length L of the JSON header
  bytes 16..    UTF-8 JSON header: format_version, config, step, epoch,
                rng_cursors, and a tensor manifest of {name, shape, offset}
  then          raw float32 payloads, concatenated in manifest order
Offsets are relative to the payload start; the payload length must equal the
manifest total exactly.
"""

from __future__ import annotations

import csv
import json
import math
import struct
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import backend
from . import tensor as T
from .errors import CheckpointError, ConfigError, NonFiniteError
from .masking import MaskPlan, context_aware_mask
from .model import ModelParams, ViTConfig, init_params, pos_tables, pretrain_forward, zeros_params
from .patches import PatchConfig, patchify
from .rng import PURPOSE_DATA, PURPOSE_MASK, RngStream, sub_seed

MAGIC = b"HDMAE001"
FORMAT_VERSION = 1
METRIC_HEADER = ["step", "lr", "loss", "inside_rate", "outside_rate", "seconds"]


@dataclass(frozen=True)
class TrainConfig:
    vit: ViTConfig
    lr: float = 2.5e-4
    weight_decay: float = 0.04
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    batch_size: int = 8
    epochs: int = 1
    total_steps: int | None = None  # overrides epochs when set
    warmup_steps: int | None = None  # None -> 5% of total, rounded half up
    schedule: str = "cosine"  # constant | cosine
    seed: int = 0
    mask_ratio: float = 0.75
    inside_weight: float = 4.0
    clip_norm: float | None = None
    micro_batch: int | None = None  # None -> whole batch at once
    checkpoint_every: int = 0  # 0 -> final checkpoint only

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError(f"betas must be in [0, 1): {self.beta1}, {self.beta2}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.schedule not in ("constant", "cosine"):
            raise ConfigError(f"schedule must be constant or cosine, got {self.schedule!r}")
        if self.micro_batch is not None and self.batch_size % self.micro_batch != 0:
            raise ConfigError(
                f"micro_batch {self.micro_batch} must divide batch_size {self.batch_size}"
            )
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        vit = d.pop("vit")
        patch = PatchConfig(**vit.pop("patch"))
        known = set(cls.__dataclass_fields__) - {"vit"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(vit=ViTConfig(patch=patch, **vit), **d)


@dataclass
class AdamWState:
    """Per-parameter first/second moments plus the shared step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def init(cls, params: ModelParams) -> "AdamWState":
        m = {name: np.zeros_like(t.data) for name, t, _ in params.named_tensors()}
        v = {name: np.zeros_like(t.data) for name, t, _ in params.named_tensors()}
        return cls(m=m, v=v, t=0)


@dataclass
class Checkpoint:
    version: int
    cfg: TrainConfig
    params: ModelParams
    opt: AdamWState
    rng_cursors: dict[str, int]
    step: int
    epoch: int


@dataclass
class MetricRow:
    step: int
    lr: float
    loss: float
    inside_rate: float
    outside_rate: float
    seconds: float


def resolve_total_steps(cfg: TrainConfig, dataset_len: int) -> int:
    if cfg.total_steps is not None:
        if cfg.total_steps < 1:
            raise ConfigError("total_steps must be >= 1")
        return cfg.total_steps
    steps_per_epoch = math.ceil(dataset_len / cfg.batch_size)
    return cfg.epochs * steps_per_epoch


def lr_at(step: int, cfg: TrainConfig, total_steps: int | None = None) -> float:
    """Linear warmup to cfg.lr, then constant or cosine decay to 0 at the end."""
    total = total_steps if total_steps is not None else cfg.total_steps
    if total is None:
        raise ConfigError("lr_at needs total_steps (set it or pass it explicitly)")
    warmup = cfg.warmup_steps
    if warmup is None:
        warmup = int(math.floor(0.05 * total + 0.5))
    if warmup > 0 and step < warmup:
        return cfg.lr * (step / warmup)
    if cfg.schedule == "constant":
        return cfg.lr
    span = max(total - warmup, 1)
    frac = (step - warmup) / span
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * min(frac, 1.0)))


def adamw_step(
    params: ModelParams,
    grads: dict[str, np.ndarray],
    state: AdamWState,
    lr: float,
    cfg: TrainConfig,
) -> None:
    """One decoupled-weight-decay Adam update, in place.

    Decay multiplies decayed parameters by exactly (1 - lr*weight_decay) and
    is skipped for biases, norm gains/biases, and the mask token.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter '{name}'")
    state.t += 1
    bc1 = 1.0 - cfg.beta1**state.t
    bc2 = 1.0 - cfg.beta2**state.t
    for name, t, decay in params.named_tensors():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(t.data)
        wd = cfg.weight_decay if decay else 0.0
        backend.adamw_update(
            t.data.reshape(-1),
            np.ascontiguousarray(g, dtype=t.data.dtype).reshape(-1),
            state.m[name].reshape(-1),
            state.v[name].reshape(-1),
            float(lr),
            cfg.beta1,
            cfg.beta2,
            cfg.eps,
            wd,
            bc1,
            bc2,
        )


def _clip_grads(grads: dict[str, np.ndarray], clip: float) -> None:
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g.astype(np.float64) ** 2))
    norm = math.sqrt(total)
    if norm > clip:
        for g in grads.values():
            g *= g.dtype.type(clip / norm)


def _plan_region_rates(plans: list[MaskPlan], regions) -> tuple[float, float]:
    ins, outs = [], []
    for plan, region in zip(plans, regions):
        hit = np.zeros(plan.n_tokens, dtype=bool)
        hit[plan.masked] = True
        n_in = int(region.inside.sum())
        n_out = plan.n_tokens - n_in
        ins.append((hit & region.inside).sum() / n_in if n_in else 0.0)
        outs.append((hit & ~region.inside).sum() / n_out if n_out else 0.0)
    return float(np.mean(ins)), float(np.mean(outs))


def _forward_backward(params, patch_batch, plans, enc_pos, dec_pos, micro: int):
    """Loss and grads for one batch; micro-batches accumulate in fixed order."""
    bsz = patch_batch.shape[0]
    n_chunks = bsz // micro
    acc: dict[str, np.ndarray] = {}
    loss_total = 0.0
    for ci in range(n_chunks):
        sl = slice(ci * micro, (ci + 1) * micro)
        with T.GradTape():
            _, loss = pretrain_forward(
                params, T.Tensor(patch_batch[sl]), plans[sl], enc_pos, dec_pos
            )
        T.backward(loss)
        loss_total += loss.item()
        for name, t, _ in params.named_tensors():
            g = t.grad if t.grad is not None else np.zeros_like(t.data)
            if n_chunks > 1:
                g = g / n_chunks
            if name in acc:
                acc[name] = acc[name] + g
            else:
                acc[name] = g
    return loss_total / n_chunks, acc


def train(cfg: TrainConfig, dataset, out_dir=None):
    """Run the pre-training loop; returns (final Checkpoint, metric rows).

    `dataset` is a sequence of PhantomSample-like objects exposing `.image`
    and `.region`. When out_dir is given, metrics.csv and checkpoints are
    written there (checkpoint_step{K}.hdmae plus checkpoint_final.hdmae).
    """
    dataset = list(dataset)
    if not dataset:
        raise ConfigError("dataset is empty")
    vit = cfg.vit
    params = init_params(vit, cfg.seed)
    state = AdamWState.init(params)
    mask_stream = RngStream(sub_seed(cfg.seed, PURPOSE_MASK))
    data_stream = RngStream(sub_seed(cfg.seed, PURPOSE_DATA))
    patches_all = np.stack([patchify(s.image, vit.patch).data for s in dataset])
    regions = [s.region for s in dataset]
    enc_pos, dec_pos = pos_tables(vit)
    total = resolve_total_steps(cfg, len(dataset))
    micro = cfg.micro_batch or cfg.batch_size

    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    order = data_stream.perm(len(dataset))
    cursor = 0
    epoch = 0
    rows: list[MetricRow] = []
    for step in range(total):
        t0 = time.perf_counter()
        idx = []
        while len(idx) < cfg.batch_size:
            if cursor == len(order):
                order = data_stream.perm(len(dataset))
                cursor = 0
                epoch += 1
            idx.append(int(order[cursor]))
            cursor += 1
        plans = [
            context_aware_mask(regions[i], cfg.mask_ratio, cfg.inside_weight, mask_stream)
            for i in idx
        ]
        lr = lr_at(step, cfg, total)
        loss_val, grads = _forward_backward(
            params, patches_all[idx], plans, enc_pos, dec_pos, micro
        )
        if cfg.clip_norm is not None:
            _clip_grads(grads, cfg.clip_norm)
        adamw_step(params, grads, state, lr, cfg)
        inside_rate, outside_rate = _plan_region_rates(plans, [regions[i] for i in idx])
        rows.append(
            MetricRow(step, lr, loss_val, inside_rate, outside_rate, time.perf_counter() - t0)
        )
        if (
            out_path is not None
            and cfg.checkpoint_every > 0
            and (step + 1) % cfg.checkpoint_every == 0
            and step + 1 < total
        ):
            ck = Checkpoint(
                FORMAT_VERSION,
                cfg,
                params,
                state,
                {"mask": mask_stream.counter, "data": data_stream.counter},
                step + 1,
                epoch,
            )
            save_checkpoint(ck, out_path / f"checkpoint_step{step + 1}.hdmae")

    ckpt = Checkpoint(
        version=FORMAT_VERSION,
        cfg=cfg,
        params=params,
        opt=state,
        rng_cursors={"mask": mask_stream.counter, "data": data_stream.counter},
        step=total,
        epoch=epoch,
    )
    if out_path is not None:
        save_checkpoint(ckpt, out_path / "checkpoint_final.hdmae")
        write_metrics(rows, out_path / "metrics.csv")
    return ckpt, rows


def write_metrics(rows: list[MetricRow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRIC_HEADER)
        for r in rows:
            writer.writerow(
                [r.step, repr(r.lr), repr(r.loss), repr(r.inside_rate), repr(r.outside_rate), f"{r.seconds:.6f}"]
            )


# --------------------------------------------------------------------------
# checkpoint serialization


def _manifest_tensors(params: ModelParams, state: AdamWState):
    for name, t, _ in params.named_tensors():
        yield name, t.data
    for name, _t, _ in params.named_tensors():
        yield f"adam.m.{name}", state.m[name]
    for name, _t, _ in params.named_tensors():
        yield f"adam.v.{name}", state.v[name]


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    manifest = []
    blobs = []
    offset = 0
    for name, arr in _manifest_tensors(ckpt.params, ckpt.opt):
        blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    header = {
        "format_version": ckpt.version,
        "config": ckpt.cfg.to_dict(),
        "step": ckpt.step,
        "epoch": ckpt.epoch,
        "opt_t": ckpt.opt.t,
        "rng_cursors": ckpt.rng_cursors,
        "manifest": manifest,
        "payload_bytes": offset,
    }
    hjson = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(hjson)))
        fh.write(hjson)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 16:
        raise CheckpointError(f"{path}: truncated before header")
    if raw[:8] != MAGIC:
        if raw[:5] == MAGIC[:5]:
            raise CheckpointError(f"{path}: unsupported format version {raw[5:8]!r}")
        raise CheckpointError(f"{path}: bad magic {raw[:8]!r}")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    if len(raw) < 16 + hlen:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[16 : 16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt JSON header: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format_version {header.get('format_version')} != {FORMAT_VERSION}"
        )
    try:
        cfg = TrainConfig.from_dict(header["config"])
    except (KeyError, TypeError, ConfigError) as exc:
        raise CheckpointError(f"{path}: bad config block: {exc}") from exc
    payload = raw[16 + hlen :]
    declared = header.get("payload_bytes")
    expected = 0
    for entry in header["manifest"]:
        expected += int(np.prod(entry["shape"])) * 4 if entry["shape"] else 4
    if declared != expected or len(payload) != expected:
        raise CheckpointError(
            f"{path}: payload length {len(payload)} does not match manifest ({expected})"
        )
    params = zeros_params(cfg.vit)
    state = AdamWState.init(params)
    state.t = int(header.get("opt_t", 0))
    targets = {name: t.data for name, t, _ in params.named_tensors()}
    for name in list(targets):
        targets[f"adam.m.{name}"] = state.m[name]
        targets[f"adam.v.{name}"] = state.v[name]
    seen = set()
    for entry in header["manifest"]:
        name, shape, off = entry["name"], tuple(entry["shape"]), int(entry["offset"])
        if name not in targets:
            raise CheckpointError(f"{path}: unknown tensor {name!r} in manifest")
        dst = targets[name]
        if dst.shape != shape:
            raise CheckpointError(f"{path}: tensor {name!r} shape {shape} != expected {dst.shape}")
        if off < 0 or off + dst.size * 4 > len(payload):
            raise CheckpointError(f"{path}: tensor {name!r} offset {off} outside payload")
        arr = np.frombuffer(payload, dtype="<f4", count=dst.size, offset=off)
        dst[...] = arr.reshape(shape)
        seen.add(name)
    missing = set(targets) - seen
    if missing:
        raise CheckpointError(f"{path}: manifest missing tensors {sorted(missing)[:3]}...")
    return Checkpoint(
        version=FORMAT_VERSION,
        cfg=cfg,
        params=params,
        opt=state,
        rng_cursors={k: int(v) for k, v in header.get("rng_cursors", {}).items()},
        step=int(header.get("step", 0)),
        epoch=int(header.get("epoch", 0)),
    )
