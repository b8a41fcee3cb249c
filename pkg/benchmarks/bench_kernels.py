#!/usr/bin/env python3
"""Benchmarks the compiled kernel extension against the numpy fallback, and
the visible-token-only encoder against a full-sequence encoder.

Usage: python3 benchmarks/bench_kernels.py [--reps 200]
"""

import argparse
import time

import numpy as np

from hdmae import backend
from hdmae import tensor as T
from hdmae.model import ViTConfig, encoder_forward, init_params
from hdmae.patches import PatchConfig
from hdmae.rng import RngStream


def best_of(fn, reps):
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_kernels(reps: int):
    if not backend.has_extension():
        print("extension not built; kernel comparison skipped "
              "(run `python3 setup.py build_ext --inplace`)")
        return
    py = backend.get_impl("python")
    ext = backend.get_impl("ext")
    rows, width = 512, 64  # typical training shapes: [batch*tokens, dim]
    x1 = RngStream(1).normal(rows * width).astype(np.float32)
    g1 = RngStream(2).normal(rows * width).astype(np.float32)
    x2 = np.ascontiguousarray(x1.reshape(rows, width))
    g2 = np.ascontiguousarray(g1.reshape(rows, width))
    gain = np.ones(width, dtype=np.float32)
    bias = np.zeros(width, dtype=np.float32)
    y2 = py.softmax_fwd(x2)
    p = RngStream(3).normal(rows * width).astype(np.float32)
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    adam_args = (1e-3, 0.9, 0.95, 1e-8, 0.04, 0.1, 0.05)

    cases = [
        ("gelu_fwd", lambda impl: impl.gelu_fwd(x1)),
        ("gelu_bwd", lambda impl: impl.gelu_bwd(x1, g1)),
        ("softmax_fwd", lambda impl: impl.softmax_fwd(x2)),
        ("softmax_bwd", lambda impl: impl.softmax_bwd(y2, g2)),
        ("layernorm_fwd", lambda impl: impl.layernorm_fwd(x2, gain, bias, 1e-6)),
        ("adamw_update", lambda impl: impl.adamw_update(p, g1, m, v, *adam_args)),
    ]
    print(f"kernel timings, float32 [{rows}x{width}], best of {reps}:")
    print(f"{'kernel':<16}{'numpy':>12}{'compiled':>12}{'speedup':>9}")
    for name, fn in cases:
        t_py = best_of(lambda: fn(py), reps)
        t_ext = best_of(lambda: fn(ext), reps)
        print(f"{name:<16}{t_py * 1e6:>10.1f}us{t_ext * 1e6:>10.1f}us{t_py / t_ext:>8.2f}x")


def bench_training_step(reps: int):
    from hdmae.masking import random_mask
    from hdmae.model import pos_tables, pretrain_forward

    cfg = ViTConfig(
        patch=PatchConfig(image_side=64, patch_side=8, embed_dim=64),
        enc_depth=4, enc_heads=4, enc_dim=64, dec_depth=2, dec_heads=4, dec_dim=32,
    )
    params = init_params(cfg, 0)
    patches = T.Tensor(RngStream(7).uniform((8, 64, 64)).astype(np.float32))
    plans = [random_mask(64, 0.75, RngStream(10 + i)) for i in range(8)]
    enc_pos, dec_pos = pos_tables(cfg)

    def step():
        with T.GradTape():
            _, loss = pretrain_forward(params, patches, plans, enc_pos, dec_pos)
        T.backward(loss)

    t = best_of(step, max(3, reps // 20))
    print(f"\nfull fwd+bwd toy step (batch 8, N=64, {backend.KERNEL_BACKEND} kernels): {t * 1e3:.1f} ms")


def bench_masked_encoder():
    cfg = ViTConfig(
        patch=PatchConfig(image_side=256, patch_side=8, embed_dim=64),
        enc_depth=2, enc_heads=4, enc_dim=64, dec_depth=1, dec_heads=4, dec_dim=32,
    )
    params = init_params(cfg, 0)
    full = T.Tensor(RngStream(11).normal((1024, 64)).astype(np.float32))
    masked = T.Tensor(full.data[:256])
    encoder_forward(params, masked)  # warm-up
    t_masked = best_of(lambda: encoder_forward(params, masked), 5)
    t_full = best_of(lambda: encoder_forward(params, full), 5)
    print(
        f"\nencoder on visible tokens only (N=1024, mask 0.75): {t_masked * 1e3:.1f} ms "
        f"vs full {t_full * 1e3:.1f} ms -> {t_full / t_masked:.1f}x"
    )


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--reps", type=int, default=200)
    args = ap.parse_args()
    print(f"active kernel backend: {backend.KERNEL_BACKEND}")
    bench_kernels(args.reps)
    bench_training_step(args.reps)
    bench_masked_encoder()


if __name__ == "__main__":
    main()
