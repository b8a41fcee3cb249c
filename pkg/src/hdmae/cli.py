"""Command-line entry point.

Subcommands: pretrain, reconstruct, mask-stats, probe, gradcheck, phantom-gen.
Exit codes: 0 success, 1 runtime failure, 2 usage or config error. Every
command is deterministic given its resolved config; `config.resolved.json` is
written next to the outputs.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import config as C
from . import gradcheck
from .errors import ConfigError
from .masking import default_contour, draw_plans, mask_stats, save_region
from .patches import ImageGray, unpatchify
from .phantom import (
    dataset,
    load_pgm,
    resize_bilinear,
    save_pgm,
    synth_phantom,
    write_manifest,
)
from .probe import (
    Standardizer,
    evaluate_probe,
    extract_features_batch,
    train_probe,
    write_probe_report,
)
from .rng import PURPOSE_MASK, RngStream, sub_seed
from .trainer import load_checkpoint, train


def _cmd_pretrain(args) -> int:
    cfg = C.load_run_config(args.config, args.override)
    out_dir = Path(args.out or cfg["out_dir"])
    tcfg = C.build_train_config(cfg)
    data = dataset(
        cfg["seed"] + C.TRAIN_SPLIT_OFFSET,
        cfg["data"]["train_count"],
        cfg["data"]["lesion_fraction"],
        tcfg.vit.patch,
    )
    C.write_resolved(cfg, out_dir)
    ckpt, rows = train(tcfg, data, out_dir=out_dir)
    print(f"pretrain: {ckpt.step} steps, final loss {rows[-1].loss:.6f}, outputs in {out_dir}")
    return 0


def _patch_rows(img: ImageGray, cfg) -> np.ndarray:
    from .patches import patchify

    return patchify(img, cfg).data.copy()


def _mask_overlay(img: ImageGray, plan, patch_cfg) -> ImageGray:
    patches = _patch_rows(img, patch_cfg)
    patches[plan.masked] = 0.0
    return unpatchify(patches, patch_cfg)


def _cmd_reconstruct(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    vit = ckpt.cfg.vit
    pcfg = vit.patch
    if args.image is not None:
        img = load_pgm(args.image)
        if img.side != pcfg.image_side:
            img = resize_bilinear(img, pcfg.image_side)
        region = default_contour(pcfg.grid_side, 0.5)
    else:
        sample = synth_phantom(args.seed, pcfg, lesion=False)
        img, region = sample.image, sample.region
    ratio = args.ratio if args.ratio is not None else ckpt.cfg.mask_ratio
    weight = args.weight if args.weight is not None else ckpt.cfg.inside_weight
    stream = RngStream(sub_seed(args.seed, PURPOSE_MASK))
    plan = draw_plans(pcfg.token_count, ratio, stream, 1, region=region, inside_weight=weight)[0]

    from . import tensor as T
    from .model import pos_tables, pretrain_forward

    enc_pos, dec_pos = pos_tables(vit)
    patches = _patch_rows(img, pcfg)
    pred, _ = pretrain_forward(ckpt.params, T.Tensor(patches[None]), [plan], enc_pos, dec_pos)
    recon_rows = patches.copy()
    recon_rows[plan.masked] = np.clip(pred.data[0][plan.masked], 0.0, 1.0)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_pgm(img, out / "orig.pgm")
    save_pgm(_mask_overlay(img, plan, pcfg), out / "masked.pgm")
    save_pgm(unpatchify(recon_rows, pcfg), out / "recon.pgm")
    print(f"reconstruct: wrote orig/masked/recon to {out} (ratio {ratio}, weight {weight})")
    return 0


def _cmd_mask_stats(args) -> int:
    cfg = C.load_run_config(args.config, args.override)
    out_dir = Path(args.out or cfg["out_dir"])
    pcfg = C.build_patch_config(cfg)
    region = default_contour(pcfg.grid_side, cfg["mask"]["contour_cover"])
    stream = RngStream(sub_seed(cfg["seed"], PURPOSE_MASK))
    plans = draw_plans(
        pcfg.token_count,
        cfg["mask"]["ratio"],
        stream,
        args.draws,
        region=region,
        inside_weight=cfg["mask"]["inside_weight"],
    )
    stats = mask_stats(plans, region)
    out_dir.mkdir(parents=True, exist_ok=True)
    C.write_resolved(cfg, out_dir)
    save_region(region, out_dir / "region.txt")
    with open(out_dir / "mask_stats.csv", "w") as fh:
        fh.write("draws,ratio,inside_weight,inside_rate,inside_se,outside_rate,outside_se,mean_masked_frac\n")
        fh.write(
            f"{stats.draws},{cfg['mask']['ratio']},{cfg['mask']['inside_weight']},"
            f"{stats.inside_rate!r},{stats.inside_se!r},{stats.outside_rate!r},"
            f"{stats.outside_se!r},{stats.mean_masked_frac!r}\n"
        )
    freq = stats.freq / max(stats.freq.max(), 1e-12)
    save_pgm(ImageGray(side=region.grid_side, pixels=freq.astype(np.float32)), out_dir / "freq.pgm")
    print(
        f"mask-stats: draws={stats.draws} inside={stats.inside_rate:.4f}"
        f"(se {stats.inside_se:.4f}) outside={stats.outside_rate:.4f}(se {stats.outside_se:.4f})"
    )
    return 0


def _cmd_probe(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    cfg = C.load_run_config(args.config, args.override)
    out_dir = Path(args.out or cfg["out_dir"])
    pcfg = ckpt.cfg.vit.patch
    train_set = dataset(
        cfg["seed"] + C.TRAIN_SPLIT_OFFSET,
        cfg["data"]["train_count"],
        cfg["data"]["lesion_fraction"],
        pcfg,
    )
    eval_set = dataset(
        cfg["seed"] + C.EVAL_SPLIT_OFFSET,
        cfg["data"]["eval_count"],
        cfg["data"]["lesion_fraction"],
        pcfg,
    )
    train_feats = extract_features_batch(ckpt.params, [s.image for s in train_set])
    eval_feats = extract_features_batch(ckpt.params, [s.image for s in eval_set])
    std = Standardizer.fit(train_feats)
    head = train_probe(std.apply(train_feats), [s.label for s in train_set])
    rows = [
        evaluate_probe(head, std.apply(train_feats), [s.label for s in train_set], "train"),
        evaluate_probe(head, std.apply(eval_feats), [s.label for s in eval_set], "eval"),
    ]
    out_dir.mkdir(parents=True, exist_ok=True)
    C.write_resolved(cfg, out_dir)
    write_probe_report(rows, out_dir / "probe_report.csv")
    for r in rows:
        print(f"probe[{r.split}]: auroc={r.auroc:.4f} f1={r.f1:.4f} acc={r.accuracy:.4f} n={r.n}")
    return 0


def _cmd_gradcheck(args) -> int:
    results = gradcheck.run_all()
    failed = [r for r in results if not r.ok]
    for r in results:
        print(f"gradcheck {r.name}: {'PASS' if r.ok else 'FAIL'} (rel_err {r.err:.2e})")
    if failed:
        print(f"gradcheck: {len(failed)} op(s) FAILED: {', '.join(r.name for r in failed)}")
        return 1
    print(f"gradcheck: all {len(results)} ops passed")
    return 0


def _cmd_phantom_gen(args) -> int:
    if args.count < 1:
        raise ConfigError("--count must be >= 1")
    from .patches import PatchConfig

    pcfg = PatchConfig(image_side=args.image_side, patch_side=args.patch_side, embed_dim=4)
    samples = dataset(args.seed, args.count, args.lesion_fraction, pcfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rel_paths = []
    for s in samples:
        img_rel = f"img_{s.seed}.pgm"
        reg_rel = f"region_{s.seed}.txt"
        save_pgm(s.image, out / img_rel)
        save_region(s.region, out / reg_rel)
        rel_paths.append((img_rel, reg_rel))
    write_manifest(samples, out, rel_paths)
    print(f"phantom-gen: wrote {len(samples)} samples + manifest.csv to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hdmae", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="run masked-autoencoder pre-training")
    p.add_argument("--config", default=None, help="JSON run config (defaults apply)")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VAL")
    p.add_argument("--out", default=None, help="output directory (default: config out_dir)")
    p.set_defaults(fn=_cmd_pretrain)

    p = sub.add_parser("reconstruct", help="write orig/masked/recon PGM triptych")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", default=None, help="input PGM (otherwise a phantom from --seed)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ratio", type=float, default=None)
    p.add_argument("--weight", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_reconstruct)

    p = sub.add_parser("mask-stats", help="Monte-Carlo masking statistics")
    p.add_argument("--config", default=None)
    p.add_argument("--override", action="append", default=[], metavar="KEY=VAL")
    p.add_argument("--draws", type=int, default=10_000)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_mask_stats)

    p = sub.add_parser("probe", help="linear probe on a frozen checkpoint encoder")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--override", action="append", default=[], metavar="KEY=VAL")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_probe)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op")
    p.set_defaults(fn=_cmd_gradcheck)

    p = sub.add_parser("phantom-gen", help="write phantom PGMs + manifest")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lesion-fraction", type=float, default=0.5)
    p.add_argument("--image-side", type=int, default=64)
    p.add_argument("--patch-side", type=int, default=8)
    p.set_defaults(fn=_cmd_phantom_gen)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure, including FormatError
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
