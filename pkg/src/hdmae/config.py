"""Run configuration: JSON file + dotted-path overrides -> typed configs.

Unknown keys are rejected. The fully resolved config is echoed to
`config.resolved.json` inside the output directory so every run is
self-describing. All randomness derives from the single top-level `seed`;
dataset splits use documented offsets (train: seed + 10_000_000, eval:
seed + 20_000_000) so their per-sample seed ranges never collide.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

from .errors import ConfigError
from .model import ViTConfig
from .patches import PatchConfig
from .trainer import TrainConfig

TRAIN_SPLIT_OFFSET = 10_000_000
EVAL_SPLIT_OFFSET = 20_000_000

DEFAULTS = {
    "seed": 0,
    "out_dir": "runs/default",
    "patch": {"image_side": 64, "patch_side": 8},
    "model": {
        "enc_depth": 4,
        "enc_heads": 4,
        "enc_dim": 64,
        "dec_depth": 2,
        "dec_heads": 4,
        "dec_dim": 32,
        "mlp_ratio": 4.0,
    },
    "mask": {"ratio": 0.75, "inside_weight": 4.0, "contour_cover": 0.5},
    "train": {
        "lr": 2.5e-4,
        "weight_decay": 0.04,
        "beta1": 0.9,
        "beta2": 0.95,
        "eps": 1e-8,
        "batch_size": 8,
        "epochs": 1,
        "total_steps": None,
        "warmup_steps": None,
        "schedule": "cosine",
        "clip_norm": None,
        "micro_batch": None,
        "checkpoint_every": 0,
    },
    "data": {
        "train_count": 32,
        "eval_count": 32,
        "lesion_fraction": 0.5,
    },
}


def _merge_strict(base: dict, override: dict, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        path = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {path!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config key {path!r} must be an object")
            out[key] = _merge_strict(base[key], val, prefix=f"{path}.")
        else:
            out[key] = val
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text  # bare strings allowed, e.g. schedule=cosine


def apply_overrides(cfg: dict, overrides: list[str]) -> dict:
    """Apply `dotted.path=value` overrides; values parse as JSON literals."""
    cfg = copy.deepcopy(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key=value")
        key, _, raw = item.partition("=")
        val = _parse_value(raw)
        node = cfg
        parts = key.split(".")
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                raise ConfigError(f"unknown config key {key!r}")
            node = node[part]
        leaf = parts[-1]
        if leaf not in node:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(node[leaf], dict):
            raise ConfigError(f"config key {key!r} is a section, not a value")
        node[leaf] = val
    return cfg


def load_run_config(path: str | Path | None, overrides: list[str] | None = None) -> dict:
    if path is None:
        raw = {}
    else:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            raw = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON: {exc}")
        if not isinstance(raw, dict):
            raise ConfigError(f"{p}: top level must be a JSON object")
    cfg = _merge_strict(DEFAULTS, raw)
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg


def build_patch_config(cfg: dict) -> PatchConfig:
    return PatchConfig(
        image_side=cfg["patch"]["image_side"],
        patch_side=cfg["patch"]["patch_side"],
        embed_dim=cfg["model"]["enc_dim"],
    )


def build_vit_config(cfg: dict) -> ViTConfig:
    return ViTConfig(patch=build_patch_config(cfg), **cfg["model"])


def build_train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(
        vit=build_vit_config(cfg),
        seed=cfg["seed"],
        mask_ratio=cfg["mask"]["ratio"],
        inside_weight=cfg["mask"]["inside_weight"],
        **cfg["train"],
    )


def write_resolved(cfg: dict, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    target = out / "config.resolved.json"
    target.write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    return target
