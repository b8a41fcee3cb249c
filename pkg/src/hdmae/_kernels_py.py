"""Numpy fallback for the compiled kernel extension.

Function-for-function mirror of `hdmae._kernels`; the compiled path fuses
these loops in C. Results agree to float rounding (the two paths may differ
in the last ulps because numpy reduces with pairwise summation).
"""

from __future__ import annotations

import numpy as np

_GELU_K = 0.7978845608028654  # sqrt(2/pi)
_GELU_C = 0.044715


def gelu_fwd(x: np.ndarray) -> np.ndarray:
    u = _GELU_K * (x + _GELU_C * x * x * x)
    return 0.5 * x * (1.0 + np.tanh(u))


def gelu_bwd(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    u = _GELU_K * (x + _GELU_C * x * x * x)
    t = np.tanh(u)
    du = _GELU_K * (1.0 + 3.0 * _GELU_C * x * x)
    return g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


def softmax_fwd(x: np.ndarray) -> np.ndarray:
    # rows = last dim; max-subtraction for overflow stability
    m = np.max(x, axis=-1, keepdims=True)
    e = np.exp(x - m)
    return e / np.sum(e, axis=-1, keepdims=True)


def softmax_bwd(y: np.ndarray, g: np.ndarray) -> np.ndarray:
    dot = np.sum(g * y, axis=-1, keepdims=True)
    return y * (g - dot)


def layernorm_fwd(x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float):
    """Per-row (last dim) zero-mean unit-variance normalization, then affine.

    Returns (y, mean, rstd); mean/rstd are saved for the backward pass.
    Population variance (divide by row length, no Bessel correction).
    """
    mean = np.mean(x, axis=-1, keepdims=True)
    var = np.mean((x - mean) ** 2, axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    y = (x - mean) * rstd * gain + bias
    return y, mean, rstd


def layernorm_bwd(x, gain, mean, rstd, g):
    xhat = (x - mean) * rstd
    dgain = np.sum(g * xhat, axis=tuple(range(x.ndim - 1)))
    dbias = np.sum(g, axis=tuple(range(x.ndim - 1)))
    dxhat = g * gain
    m1 = np.mean(dxhat, axis=-1, keepdims=True)
    m2 = np.mean(dxhat * xhat, axis=-1, keepdims=True)
    dx = rstd * (dxhat - m1 - xhat * m2)
    return dx, dgain, dbias


def adamw_update(p, g, m, v, lr, beta1, beta2, eps, wd, bc1, bc2):
    """Fused in-place AdamW step on flat arrays.

    m <- b1*m + (1-b1)*g;  v <- b2*v + (1-b2)*g^2;
    p <- p*(1 - lr*wd) - lr*(m/bc1)/(sqrt(v/bc2) + eps)
    with bias corrections bc1 = 1-b1^t, bc2 = 1-b2^t supplied by the caller.
    Decay is multiplicative so a zero-gradient step shrinks p by exactly
    (1 - lr*wd).
    """
    one = p.dtype.type(1.0)
    m *= p.dtype.type(beta1)
    m += p.dtype.type(1.0 - beta1) * g
    v *= p.dtype.type(beta2)
    v += p.dtype.type(1.0 - beta2) * (g * g)
    mhat = m / p.dtype.type(bc1)
    vhat = v / p.dtype.type(bc2)
    p *= one - p.dtype.type(lr) * p.dtype.type(wd)
    p -= p.dtype.type(lr) * mhat / (np.sqrt(vhat) + p.dtype.type(eps))
