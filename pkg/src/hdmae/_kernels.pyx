# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: gelu / softmax / layernorm forward+backward and the
fused AdamW update. Mirrors `hdmae._kernels_py`; selected by `hdmae.backend`.

All row-wise kernels treat the input as a 2-D (rows, width) array; callers
reshape. float32 and float64 supported via fused types.
"""

import numpy as np

cimport cython
from libc.math cimport exp, expf, sqrt, tanh, tanhf

ctypedef fused floating:
    float
    double

cdef double GELU_K = 0.7978845608028654
cdef double GELU_C = 0.044715


cdef inline floating _tanh(floating x) noexcept nogil:
    if floating is float:
        return tanhf(x)
    else:
        return tanh(x)


cdef inline floating _exp(floating x) noexcept nogil:
    if floating is float:
        return expf(x)
    else:
        return exp(x)


def gelu_fwd(floating[::1] x):
    cdef Py_ssize_t n = x.shape[0]
    out_np = np.empty(n, dtype=np.asarray(x).dtype)
    cdef floating[::1] out = out_np
    cdef Py_ssize_t i
    cdef floating xi, u
    for i in range(n):
        xi = x[i]
        u = <floating>GELU_K * (xi + <floating>GELU_C * xi * xi * xi)
        out[i] = <floating>0.5 * xi * (<floating>1.0 + _tanh(u))
    return out_np


def gelu_bwd(floating[::1] x, floating[::1] g):
    cdef Py_ssize_t n = x.shape[0]
    out_np = np.empty(n, dtype=np.asarray(x).dtype)
    cdef floating[::1] out = out_np
    cdef Py_ssize_t i
    cdef floating xi, u, t, du
    for i in range(n):
        xi = x[i]
        u = <floating>GELU_K * (xi + <floating>GELU_C * xi * xi * xi)
        t = _tanh(u)
        du = <floating>GELU_K * (<floating>1.0 + <floating>3.0 * <floating>GELU_C * xi * xi)
        out[i] = g[i] * (<floating>0.5 * (<floating>1.0 + t)
                         + <floating>0.5 * xi * (<floating>1.0 - t * t) * du)
    return out_np


def softmax_fwd(floating[:, ::1] x):
    cdef Py_ssize_t rows = x.shape[0], width = x.shape[1]
    out_np = np.empty((rows, width), dtype=np.asarray(x).dtype)
    cdef floating[:, ::1] out = out_np
    cdef Py_ssize_t r, j
    cdef floating m, s, e
    for r in range(rows):
        m = x[r, 0]
        for j in range(1, width):
            if x[r, j] > m:
                m = x[r, j]
        s = 0.0
        for j in range(width):
            e = _exp(x[r, j] - m)
            out[r, j] = e
            s += e
        for j in range(width):
            out[r, j] /= s
    return out_np


def softmax_bwd(floating[:, ::1] y, floating[:, ::1] g):
    cdef Py_ssize_t rows = y.shape[0], width = y.shape[1]
    out_np = np.empty((rows, width), dtype=np.asarray(y).dtype)
    cdef floating[:, ::1] out = out_np
    cdef Py_ssize_t r, j
    cdef floating dot
    for r in range(rows):
        dot = 0.0
        for j in range(width):
            dot += g[r, j] * y[r, j]
        for j in range(width):
            out[r, j] = y[r, j] * (g[r, j] - dot)
    return out_np


def layernorm_fwd(floating[:, ::1] x, floating[::1] gain, floating[::1] bias, double eps):
    cdef Py_ssize_t rows = x.shape[0], width = x.shape[1]
    dt = np.asarray(x).dtype
    y_np = np.empty((rows, width), dtype=dt)
    mean_np = np.empty((rows, 1), dtype=dt)
    rstd_np = np.empty((rows, 1), dtype=dt)
    cdef floating[:, ::1] y = y_np
    cdef floating[:, ::1] mean = mean_np
    cdef floating[:, ::1] rstd = rstd_np
    cdef Py_ssize_t r, j
    cdef floating mu, var, d, rs
    for r in range(rows):
        mu = 0.0
        for j in range(width):
            mu += x[r, j]
        mu /= <floating>width
        var = 0.0
        for j in range(width):
            d = x[r, j] - mu
            var += d * d
        var /= <floating>width
        rs = <floating>1.0 / <floating>sqrt(var + <floating>eps)
        mean[r, 0] = mu
        rstd[r, 0] = rs
        for j in range(width):
            y[r, j] = (x[r, j] - mu) * rs * gain[j] + bias[j]
    return y_np, mean_np, rstd_np


def layernorm_bwd(floating[:, ::1] x, floating[::1] gain,
                  floating[:, ::1] mean, floating[:, ::1] rstd,
                  floating[:, ::1] g):
    cdef Py_ssize_t rows = x.shape[0], width = x.shape[1]
    dt = np.asarray(x).dtype
    dx_np = np.empty((rows, width), dtype=dt)
    dgain_np = np.zeros(width, dtype=dt)
    dbias_np = np.zeros(width, dtype=dt)
    cdef floating[:, ::1] dx = dx_np
    cdef floating[::1] dgain = dgain_np
    cdef floating[::1] dbias = dbias_np
    cdef Py_ssize_t r, j
    cdef floating mu, rs, xhat, dxh, m1, m2
    for r in range(rows):
        mu = mean[r, 0]
        rs = rstd[r, 0]
        m1 = 0.0
        m2 = 0.0
        for j in range(width):
            xhat = (x[r, j] - mu) * rs
            dxh = g[r, j] * gain[j]
            dgain[j] += g[r, j] * xhat
            dbias[j] += g[r, j]
            m1 += dxh
            m2 += dxh * xhat
        m1 /= <floating>width
        m2 /= <floating>width
        for j in range(width):
            xhat = (x[r, j] - mu) * rs
            dx[r, j] = rs * (g[r, j] * gain[j] - m1 - xhat * m2)
    return dx_np, dgain_np, dbias_np


def adamw_update(floating[::1] p, floating[::1] g, floating[::1] m, floating[::1] v,
                 double lr, double beta1, double beta2, double eps, double wd,
                 double bc1, double bc2):
    cdef Py_ssize_t n = p.shape[0]
    cdef Py_ssize_t i
    cdef floating b1 = <floating>beta1, b2 = <floating>beta2
    cdef floating c1 = <floating>(1.0 - beta1), c2 = <floating>(1.0 - beta2)
    cdef floating lrf = <floating>lr, epsf = <floating>eps
    cdef floating decay = <floating>1.0 - <floating>lr * <floating>wd
    cdef floating rbc1 = <floating>1.0 / <floating>bc1
    cdef floating rbc2 = <floating>1.0 / <floating>bc2
    cdef floating gi, mhat, vhat
    for i in range(n):
        gi = g[i]
        m[i] = b1 * m[i] + c1 * gi
        v[i] = b2 * v[i] + c2 * gi * gi
        mhat = m[i] * rbc1
        vhat = v[i] * rbc2
        p[i] = p[i] * decay - lrf * mhat / (<floating>sqrt(vhat) + epsf)
