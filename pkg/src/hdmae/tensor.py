"""Dense tensors with reverse-mode automatic differentiation.

A `Tensor` wraps a numpy array (float32 for training, float64 for gradient
checks). Operations executed while a `GradTape` is active are recorded
eagerly; `backward(loss)` replays the tape in exact reverse execution order,
accumulates adjoints, assigns each grad-enabled ancestor's `.grad` exactly
once, and clears the tape. Tapes are one-shot and must stay on one thread;
tensors themselves are value-semantic and freely shareable.

Every operation validates that its output is finite and raises
`NonFiniteError` naming the op otherwise; NaN never propagates silently.
"""

from __future__ import annotations

import threading
from typing import Callable, Optional, Sequence

import numpy as np

from . import backend
from .errors import ContractError, NonFiniteError, ShapeError

LN_EPS = 1e-6  # default layer-norm epsilon used by the model


# --------------------------------------------------------------------------
# tape machinery

_tls = threading.local()


def _tape_stack():
    if not hasattr(_tls, "stack"):
        _tls.stack = []
    return _tls.stack


def _active_tape() -> Optional["GradTape"]:
    stack = _tape_stack()
    return stack[-1] if stack else None


class _Node:
    __slots__ = ("name", "inputs", "out", "grad_fn")

    def __init__(self, name, inputs, out, grad_fn):
        self.name = name
        self.inputs = inputs
        self.out = out
        self.grad_fn = grad_fn


class GradTape:
    """Ordered record of executed ops, replayed in reverse by backward().

    Use as a context manager; ops run inside record themselves when any
    input has grad_enabled. A tape is consumed by backward() and cannot be
    reused.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._consumed = False

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _tape_stack().pop()
        assert popped is self, "GradTape contexts must nest properly"
        return False

    def __len__(self):
        return len(self._nodes)


class Tensor:
    """Dense array that participates in reverse-mode differentiation."""

    __slots__ = ("data", "grad", "grad_enabled", "_tape")

    def __init__(self, data, grad_enabled: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        if arr.ndim > 0 and min(arr.shape, default=1) == 0:
            raise ShapeError(f"tensor dimensions must be positive, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("non-finite values in tensor construction")
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.grad_enabled = bool(grad_enabled)
        self._tape: Optional[GradTape] = None

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.grad = None
        t.grad_enabled = False
        t._tape = None
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def astype(self, dtype) -> "Tensor":
        """Leaf copy in another precision (not recorded on any tape)."""
        return Tensor(self.data.astype(dtype), grad_enabled=self.grad_enabled)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, grad_enabled={self.grad_enabled})"

    # arithmetic sugar; all defined in terms of the module-level ops
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _check_same_dtype(name, *ts):
    dt = ts[0].data.dtype
    for t in ts[1:]:
        if t.data.dtype != dt:
            raise ContractError(f"{name}: mixed dtypes {dt} and {t.data.dtype}")


def _apply(name: str, inputs: Sequence[Tensor], out_data: np.ndarray, grad_fn: Callable):
    """Wrap an op result, verify finiteness, and record on the active tape."""
    out_data = np.asarray(out_data)  # reductions hand back numpy scalars
    if not np.all(np.isfinite(out_data)):
        raise NonFiniteError(f"op '{name}' produced non-finite values")
    out = Tensor._wrap(out_data)
    tape = _active_tape()
    if tape is not None and any(t.grad_enabled for t in inputs):
        out.grad_enabled = True
        out._tape = tape
        tape._nodes.append(_Node(name, tuple(inputs), out, grad_fn))
    return out


def backward(loss: Tensor) -> None:
    """Populate .grad for every grad-enabled ancestor of a scalar loss.

    Adjoints are accumulated internally and assigned once per tensor
    (overwriting any previous .grad); the tape is cleared afterwards.
    """
    if loss.shape != ():
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if tape is None or tape._consumed or not tape._nodes:
        raise ContractError("loss is not connected to an active tape")
    acc: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.data.dtype)}
    holders: dict[int, Tensor] = {id(loss): loss}
    for node in reversed(tape._nodes):
        g_out = acc.get(id(node.out))
        if g_out is None:
            continue
        grads = node.grad_fn(g_out)
        for inp, g in zip(node.inputs, grads):
            if g is None or not inp.grad_enabled:
                continue
            key = id(inp)
            if key in acc:
                acc[key] = acc[key] + g
            else:
                acc[key] = g
                holders[key] = inp
    for key, g in acc.items():
        t = holders[key]
        if t.grad_enabled:
            t.grad = np.ascontiguousarray(g)
    tape._nodes.clear()
    tape._consumed = True


# --------------------------------------------------------------------------
# broadcasting helpers


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum g down to `shape` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _reduce_leading(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    return g


# --------------------------------------------------------------------------
# elementwise / structural ops


def add(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    _check_same_dtype("add", a, b)
    out = a.data + b.data

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _apply("add", (a, b), out, grad_fn)


def sub(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    _check_same_dtype("sub", a, b)
    out = a.data - b.data

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _apply("sub", (a, b), out, grad_fn)


def mul(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    _check_same_dtype("mul", a, b)
    out = a.data * b.data
    ad, bd = a.data, b.data

    def grad_fn(g):
        return _unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)

    return _apply("mul", (a, b), out, grad_fn)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    out = x.data * x.data.dtype.type(c)

    def grad_fn(g):
        return (g * x.data.dtype.type(c),)

    return _apply("scale", (x,), out, grad_fn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product; batch dims must match exactly or be absent."""
    _check_same_dtype("matmul", a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    abatch, bbatch = a.shape[:-2], b.shape[:-2]
    k = min(len(abatch), len(bbatch))
    if k and abatch[len(abatch) - k :] != bbatch[len(bbatch) - k :]:
        raise ShapeError(f"matmul batch dims differ: {a.shape} @ {b.shape}")
    out = a.data @ b.data
    ad, bd = a.data, b.data

    def grad_fn(g):
        da = _reduce_leading(g @ np.swapaxes(bd, -1, -2), a.shape)
        db = _reduce_leading(np.swapaxes(ad, -1, -2) @ g, b.shape)
        return da, db

    return _apply("matmul", (a, b), out, grad_fn)


def transpose_last_two(x: Tensor) -> Tensor:
    if x.ndim < 2:
        raise ShapeError(f"transpose_last_two needs >=2-d input, got {x.shape}")
    return swap_axes(x, -1, -2)


def swap_axes(x: Tensor, ax1: int, ax2: int) -> Tensor:
    out = np.swapaxes(x.data, ax1, ax2)

    def grad_fn(g):
        return (np.swapaxes(g, ax1, ax2),)

    return _apply("swap_axes", (x,), out, grad_fn)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.size:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}")
    old = x.shape
    out = x.data.reshape(shape)

    def grad_fn(g):
        return (g.reshape(old),)

    return _apply("reshape", (x,), out, grad_fn)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise ShapeError("concat of empty sequence")
    _check_same_dtype("concat", *tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def grad_fn(g):
        moved = np.moveaxis(g, axis, 0)
        return tuple(
            np.moveaxis(moved[offsets[i] : offsets[i + 1]], 0, axis) for i in range(len(sizes))
        )

    return _apply("concat", tuple(tensors), out, grad_fn)


def gather_rows(x: Tensor, idx) -> Tensor:
    """Rows of x (axis 0) copied in idx order; backward scatter-adds."""
    idx_arr = np.asarray(idx, dtype=np.int64)
    if idx_arr.ndim != 1:
        raise ShapeError(f"gather_rows index must be 1-d, got shape {idx_arr.shape}")
    n = x.shape[0]
    if idx_arr.size and (idx_arr.min() < 0 or idx_arr.max() >= n):
        raise IndexError(f"gather_rows index out of range [0, {n})")
    out = x.data[idx_arr]
    xshape = x.shape

    def grad_fn(g):
        dx = np.zeros(xshape, dtype=g.dtype)
        np.add.at(dx, idx_arr, g)
        return (dx,)

    return _apply("gather_rows", (x,), out, grad_fn)


def gather_rows_batched(x: Tensor, idx) -> Tensor:
    """Per-sample row gather: x[B,N,D], idx[B,M] -> out[B,M,D]."""
    idx_arr = np.asarray(idx, dtype=np.int64)
    if x.ndim != 3 or idx_arr.ndim != 2 or idx_arr.shape[0] != x.shape[0]:
        raise ShapeError(f"gather_rows_batched: x {x.shape}, idx {idx_arr.shape}")
    n = x.shape[1]
    if idx_arr.min() < 0 or idx_arr.max() >= n:
        raise IndexError(f"gather_rows_batched index out of range [0, {n})")
    out = np.take_along_axis(x.data, idx_arr[:, :, None], axis=1)
    xshape = x.shape
    b_idx = np.arange(x.shape[0])[:, None]

    def grad_fn(g):
        dx = np.zeros(xshape, dtype=g.dtype)
        np.add.at(dx, (b_idx, idx_arr), g)
        return (dx,)

    return _apply("gather_rows_batched", (x,), out, grad_fn)


def assemble_rows(visible: Tensor, idx, n_rows: int, fill: Tensor) -> Tensor:
    """Scatter visible rows to their indices, fill the rest with one vector.

    visible [B,M,D] (or [M,D]) with idx [B,M] (or [M]); idx entries must be
    unique per sample. fill is a [D] vector copied into every other row.
    Differentiable w.r.t. both visible and fill.
    """
    _check_same_dtype("assemble_rows", visible, fill)
    idx_arr = np.asarray(idx, dtype=np.int64)
    squeeze = visible.ndim == 2
    vis = visible.data[None] if squeeze else visible.data
    ia = idx_arr[None] if squeeze else idx_arr
    if vis.ndim != 3 or ia.shape != vis.shape[:2]:
        raise ShapeError(f"assemble_rows: visible {visible.shape}, idx {idx_arr.shape}")
    if fill.shape != (vis.shape[2],):
        raise ShapeError(f"assemble_rows: fill {fill.shape} vs width {vis.shape[2]}")
    if ia.min() < 0 or ia.max() >= n_rows:
        raise IndexError(f"assemble_rows index out of range [0, {n_rows})")
    bsz, _, width = vis.shape
    out = np.broadcast_to(fill.data, (bsz, n_rows, width)).copy()
    np.put_along_axis(out, ia[:, :, None], vis, axis=1)
    if squeeze:
        out = out[0]

    def grad_fn(g):
        gb = g[None] if squeeze else g
        dvis = np.take_along_axis(gb, ia[:, :, None], axis=1)
        dfill = gb.sum(axis=(0, 1)) - dvis.sum(axis=(0, 1))
        return (dvis[0] if squeeze else dvis), dfill

    return _apply("assemble_rows", (visible, fill), out, grad_fn)


# --------------------------------------------------------------------------
# reductions


def _reduction_grad(g, axis, in_shape, denom, dtype):
    if axis is None:
        return np.full(in_shape, g / dtype.type(denom), dtype=dtype)
    g = np.expand_dims(g, axis)
    return np.broadcast_to(g / dtype.type(denom), in_shape).astype(dtype, copy=False)


def mean(x: Tensor, axis: Optional[int] = None) -> Tensor:
    out = np.mean(x.data, axis=axis)
    denom = x.size if axis is None else x.shape[axis]
    in_shape, dt = x.shape, x.data.dtype

    def grad_fn(g):
        return (_reduction_grad(g, axis, in_shape, denom, dt),)

    return _apply("mean", (x,), out, grad_fn)


def tsum(x: Tensor, axis: Optional[int] = None) -> Tensor:
    out = np.sum(x.data, axis=axis)
    in_shape, dt = x.shape, x.data.dtype

    def grad_fn(g):
        return (_reduction_grad(g, axis, in_shape, 1.0, dt),)

    return _apply("sum", (x,), out, grad_fn)


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)

    def grad_fn(g):
        return (g * 0.5 / out,)

    return _apply("sqrt", (x,), out, grad_fn)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """x + b with b broadcast over the last dimension."""
    _check_same_dtype("add_bias", x, b)
    if b.shape != (x.shape[-1],):
        raise ShapeError(f"add_bias: bias {b.shape} vs last dim of {x.shape}")
    out = x.data + b.data
    nlead = x.ndim - 1

    def grad_fn(g):
        return g, g.sum(axis=tuple(range(nlead)))

    return _apply("add_bias", (x, b), out, grad_fn)


# --------------------------------------------------------------------------
# nonlinear kernels (dispatched to the selected backend)


def softmax_lastdim(x: Tensor) -> Tensor:
    """Row softmax over the last dim, max-subtracted for stability."""
    if x.shape[-1] < 1:
        raise ShapeError("softmax_lastdim needs a non-empty last dim")
    flat = np.ascontiguousarray(x.data.reshape(-1, x.shape[-1]))
    y2 = backend.softmax_fwd(flat)
    out = y2.reshape(x.shape)
    shp = x.shape

    def grad_fn(g):
        g2 = np.ascontiguousarray(g.reshape(-1, shp[-1]))
        return (backend.softmax_bwd(y2, g2).reshape(shp),)

    return _apply("softmax_lastdim", (x,), out, grad_fn)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LN_EPS) -> Tensor:
    """Zero-mean unit-variance per last-dim slice, then gain/bias affine.

    Population variance; eps added under the square root.
    """
    _check_same_dtype("layer_norm", x, gain, bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain {gain.shape}/bias {bias.shape} vs width {d}")
    flat = np.ascontiguousarray(x.data.reshape(-1, d))
    y2, mu, rstd = backend.layernorm_fwd(flat, gain.data, bias.data, float(eps))
    out = y2.reshape(x.shape)
    shp = x.shape
    gdata = gain.data

    def grad_fn(g):
        g2 = np.ascontiguousarray(g.reshape(-1, d))
        dx, dgain, dbias = backend.layernorm_bwd(flat, gdata, mu, rstd, g2)
        return dx.reshape(shp), dgain, dbias

    return _apply("layer_norm", (x, gain, bias), out, grad_fn)


def gelu(x: Tensor) -> Tensor:
    """tanh-form gelu: 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3)))."""
    flat = np.ascontiguousarray(x.data.reshape(-1))
    out = backend.gelu_fwd(flat).reshape(x.shape)
    shp = x.shape

    def grad_fn(g):
        gg = np.ascontiguousarray(g.reshape(-1))
        return (backend.gelu_bwd(flat, gg).reshape(shp),)

    return _apply("gelu", (x,), out, grad_fn)


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid_np(x.data)

    def grad_fn(g):
        return (g * out * (1.0 - out),)

    return _apply("sigmoid", (x,), out, grad_fn)


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)) via logaddexp; stable for large |x|."""
    out = np.logaddexp(x.data.dtype.type(0.0), x.data)
    xd = x.data

    def grad_fn(g):
        return (g * _sigmoid_np(xd),)

    return _apply("softplus", (x,), out, grad_fn)


# --------------------------------------------------------------------------
# seeded initializers


def gaussian_init(shape, stream, std: float = 1.0, dtype=np.float32) -> Tensor:
    """Seeded normal(0, std) leaf tensor drawn from an RngStream."""
    return Tensor((stream.normal(shape) * std).astype(dtype))


def uniform_init(shape, stream, low: float = 0.0, high: float = 1.0, dtype=np.float32) -> Tensor:
    """Seeded uniform [low, high) leaf tensor drawn from an RngStream."""
    return Tensor((stream.uniform(shape) * (high - low) + low).astype(dtype))


def trunc_normal_init(shape, stream, std: float = 0.02, dtype=np.float32) -> Tensor:
    """Seeded truncated normal (|z| <= 2 before scaling by std)."""
    return Tensor(stream.trunc_normal(shape, std=std).astype(dtype))


def zeros(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype))


def ones(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype))
