"""Central finite-difference gradient checking.

The oracle here is independent of the tape: it re-evaluates the forward pass
at perturbed inputs and never touches recorded adjoints. Checks run in
float64 with per-element step h = 1e-3 * max(1, |x|); the reported error is

    rel_err = max|analytic - fd| / max(1, max|fd|, max|analytic|)

and a check passes when rel_err < 1e-3. `OP_CASES` registers every
differentiable op exactly once; `run_all` powers both the test suite and the
`hdmae gradcheck` CLI command.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .rng import RngStream

TOL = 1e-3
H_SCALE = 1e-3


def fd_gradient(f: Callable[[Sequence[np.ndarray]], float], xs: Sequence[np.ndarray]):
    """Central-difference gradient of scalar f w.r.t. each array in xs."""
    grads = []
    for i, x in enumerate(xs):
        g = np.zeros_like(x)
        flat_x = x.reshape(-1)
        flat_g = g.reshape(-1)
        for j in range(flat_x.size):
            orig = flat_x[j]
            h = H_SCALE * max(1.0, abs(orig))
            flat_x[j] = orig + h
            fp = f(xs)
            flat_x[j] = orig - h
            fm = f(xs)
            flat_x[j] = orig
            flat_g[j] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def rel_err(analytic: np.ndarray, fd: np.ndarray) -> float:
    scale = max(1.0, float(np.max(np.abs(fd))), float(np.max(np.abs(analytic))))
    return float(np.max(np.abs(analytic - fd))) / scale


@dataclass
class CheckResult:
    name: str
    err: float
    ok: bool


def check_fn(name: str, fn: Callable[..., T.Tensor], xs: Sequence[np.ndarray], tol: float = TOL):
    """Compare tape gradients of scalar fn(*tensors) against the fd oracle."""
    xs = [np.asarray(x, dtype=np.float64) for x in xs]
    ts = [T.Tensor(x.copy(), grad_enabled=True, dtype=np.float64) for x in xs]
    with T.GradTape():
        loss = fn(*ts)
    T.backward(loss)
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in ts]

    def eval_point(arrays):
        consts = [T.Tensor(a, dtype=np.float64) for a in arrays]
        return fn(*consts).item()

    fd = fd_gradient(eval_point, xs)
    err = max(rel_err(a, f) for a, f in zip(analytic, fd))
    return CheckResult(name, err, err < tol)


def _weights(shape, seed):
    return T.Tensor(RngStream(seed).normal(shape), dtype=np.float64)


def _weighted_sum(out: T.Tensor, seed: int) -> T.Tensor:
    return T.tsum(T.mul(out, _weights(out.shape, seed)))


def _s(seed):
    return RngStream(seed)


def _case_add():
    a, b = _s(11).normal((3, 4)), _s(12).normal((3, 4))
    return lambda x, y: _weighted_sum(T.add(x, y), 101), [a, b]


def _case_sub():
    a, b = _s(13).normal((3, 4)), _s(14).normal((4,))
    return lambda x, y: _weighted_sum(T.sub(x, y), 102), [a, b]


def _case_mul():
    a, b = _s(15).normal((2, 3, 2)), _s(16).normal((3, 2))
    return lambda x, y: _weighted_sum(T.mul(x, y), 103), [a, b]


def _case_scale():
    a = _s(17).normal((5,))
    return lambda x: _weighted_sum(T.scale(x, -1.7), 104), [a]


def _case_matmul():
    a, b = _s(18).normal((3, 4)), _s(19).normal((4, 2))
    return lambda x, y: _weighted_sum(T.matmul(x, y), 105), [a, b]


def _case_transpose_last_two():
    a = _s(20).normal((2, 3, 4))
    return lambda x: _weighted_sum(T.transpose_last_two(x), 106), [a]


def _case_swap_axes():
    a = _s(21).normal((2, 3, 4))
    return lambda x: _weighted_sum(T.swap_axes(x, 0, 2), 107), [a]


def _case_reshape():
    a = _s(22).normal((3, 4))
    return lambda x: _weighted_sum(T.reshape(x, (2, 6)), 108), [a]


def _case_concat():
    a, b = _s(23).normal((2, 3)), _s(24).normal((2, 2))
    return lambda x, y: _weighted_sum(T.concat([x, y], axis=1), 109), [a, b]


def _case_gather_rows():
    a = _s(25).normal((5, 3))
    idx = [4, 0, 0, 2]  # duplicate on purpose: backward must scatter-add
    return lambda x: _weighted_sum(T.gather_rows(x, idx), 110), [a]


def _case_gather_rows_batched():
    a = _s(26).normal((2, 5, 3))
    idx = np.array([[0, 3, 3], [4, 1, 2]])
    return lambda x: _weighted_sum(T.gather_rows_batched(x, idx), 111), [a]


def _case_assemble_rows():
    vis = _s(27).normal((2, 2, 3))
    fill = _s(28).normal((3,))
    idx = np.array([[1, 3], [0, 2]])
    return lambda v, f: _weighted_sum(T.assemble_rows(v, idx, 4, f), 112), [vis, fill]


def _case_mean():
    a = _s(29).normal((3, 4))
    return lambda x: T.add(T.mean(x), _weighted_sum(T.mean(x, axis=-1), 113)), [a]


def _case_sum():
    a = _s(30).normal((3, 4))
    return lambda x: T.add(T.tsum(x), _weighted_sum(T.tsum(x, axis=0), 114)), [a]


def _case_sqrt():
    a = _s(31).uniform((3, 3)) + 0.5
    return lambda x: _weighted_sum(T.sqrt(x), 115), [a]


def _case_add_bias():
    a, b = _s(32).normal((2, 3, 4)), _s(33).normal((4,))
    return lambda x, y: _weighted_sum(T.add_bias(x, y), 116), [a, b]


def _case_softmax_lastdim():
    a = _s(34).normal((3, 5))
    return lambda x: _weighted_sum(T.softmax_lastdim(x), 117), [a]


def _case_layer_norm():
    x = _s(35).normal((3, 6))
    gain = _s(36).normal((6,)) * 0.5 + 1.0
    bias = _s(37).normal((6,)) * 0.1
    return lambda a, g, b: _weighted_sum(T.layer_norm(a, g, b, 1e-6), 118), [x, gain, bias]


def _case_gelu():
    # includes the contract points +-2 and +-0.5
    a = np.array([-2.0, -0.5, 0.5, 2.0, 0.1, -1.3])
    return lambda x: _weighted_sum(T.gelu(x), 119), [a]


def _case_softplus():
    a = _s(38).normal((4, 2)) * 2.0
    return lambda x: _weighted_sum(T.softplus(x), 120), [a]


def _case_sigmoid():
    a = _s(39).normal((4, 2)) * 2.0
    return lambda x: _weighted_sum(T.sigmoid(x), 121), [a]


def _case_embed_patches():
    from .patches import embed_patches

    p = _s(40).uniform((4, 6))
    w = _s(41).normal((6, 5)) * 0.3
    b = _s(42).normal((5,)) * 0.1
    return lambda pp, ww, bb: _weighted_sum(embed_patches(pp, ww, bb), 122), [p, w, b]


def _case_attention():
    from .model import attention

    q = _s(43).normal((3, 4)) * 0.7
    k = _s(44).normal((3, 4)) * 0.7
    v = _s(45).normal((3, 4))
    return lambda a, b, c: _weighted_sum(attention(a, b, c, n_heads=2), 123), [q, k, v]


OP_CASES = {
    "add": _case_add,
    "sub": _case_sub,
    "mul": _case_mul,
    "scale": _case_scale,
    "matmul": _case_matmul,
    "transpose_last_two": _case_transpose_last_two,
    "swap_axes": _case_swap_axes,
    "reshape": _case_reshape,
    "concat": _case_concat,
    "gather_rows": _case_gather_rows,
    "gather_rows_batched": _case_gather_rows_batched,
    "assemble_rows": _case_assemble_rows,
    "mean": _case_mean,
    "sum": _case_sum,
    "sqrt": _case_sqrt,
    "add_bias": _case_add_bias,
    "softmax_lastdim": _case_softmax_lastdim,
    "layer_norm": _case_layer_norm,
    "gelu": _case_gelu,
    "softplus": _case_softplus,
    "sigmoid": _case_sigmoid,
    "embed_patches": _case_embed_patches,
    "attention": _case_attention,
}


def run_all(cases=None, tol: float = TOL) -> list[CheckResult]:
    """Gradcheck every registered op once; extra cases may be injected."""
    cases = dict(OP_CASES if cases is None else cases)
    results = []
    for name, builder in cases.items():
        fn, xs = builder()
        results.append(check_fn(name, fn, xs, tol=tol))
    return results


def gradcheck_toy_mae(tol: float = TOL):
    """Finite-difference check of the full toy MAE loss w.r.t. every parameter.

    Toy setup: 16x16 image, patch 4 (N=16 tokens), enc/dec dim 16, one
    encoder and one decoder block, run in float64 with a fixed mask plan.
    Returns (max_rel_err, {param_name: rel_err}).
    """
    from .masking import random_mask
    from .model import ModelParams, ViTConfig, init_params, pretrain_forward
    from .patches import PatchConfig, sincos_pos_embed

    cfg = ViTConfig(
        patch=PatchConfig(image_side=16, patch_side=4, embed_dim=16),
        enc_depth=1,
        enc_heads=2,
        enc_dim=16,
        dec_depth=1,
        dec_heads=2,
        dec_dim=16,
        mlp_ratio=4.0,
    )
    params = init_params(cfg, seed=7, dtype=np.float64)
    patches = T.Tensor(_s(50).uniform((1, 16, 16)), dtype=np.float64)
    plan = random_mask(16, 0.5, _s(51))
    enc_pos = sincos_pos_embed(cfg.patch, dtype=np.float64)
    dec_pos = sincos_pos_embed(cfg.patch, dim=cfg.dec_dim, dtype=np.float64)

    def loss_value() -> float:
        _, loss = pretrain_forward(params, patches, [plan], enc_pos, dec_pos)
        return loss.item()

    with T.GradTape():
        _, loss = pretrain_forward(params, patches, [plan], enc_pos, dec_pos)
    T.backward(loss)

    errs = {}
    for name, t, _decay in params.named_tensors():
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        fd = np.zeros_like(t.data)
        flat_x = t.data.reshape(-1)
        flat_fd = fd.reshape(-1)
        for j in range(flat_x.size):
            orig = flat_x[j]
            h = H_SCALE * max(1.0, abs(orig))
            flat_x[j] = orig + h
            fp = loss_value()
            flat_x[j] = orig - h
            fm = loss_value()
            flat_x[j] = orig
            flat_fd[j] = (fp - fm) / (2.0 * h)
        errs[name] = rel_err(analytic, fd)
    return max(errs.values()), errs
