"""Dense tensor type and the primitive numeric ops of the landmark pipeline.

Tensors are immutable, row-major, rank 1..6, stored as float32 or float16.
float16 is a storage format only: every arithmetic op upcasts its operands
to float32 and produces float32 results. Convolution accumulates partial
sums in float64 and rounds once to float32, so results agree with a naive
reference loop to well under 1e-6.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

MAX_RANK = 6

_DTYPES = {"f32": np.float32, "f16": np.float16}
_DTYPE_NAMES = {np.dtype(np.float32): "f32", np.dtype(np.float16): "f16"}


class ShapeError(ValueError):
    """An operand shape violates an op contract."""


class Tensor:
    """Immutable dense array, rank 1..6, dtype 'f32' or 'f16'."""

    __slots__ = ("data",)

    def __init__(self, values, dtype: str | None = None):
        if isinstance(values, Tensor):
            values = values.data
        if dtype is None:
            arr = np.asarray(values)
            if arr.dtype not in _DTYPE_NAMES:
                arr = arr.astype(np.float32)
        else:
            if dtype not in _DTYPES:
                raise ValueError(f"unsupported dtype {dtype!r}, expected 'f32' or 'f16'")
            arr = np.asarray(values, dtype=_DTYPES[dtype])
        if arr.ndim < 1 or arr.ndim > MAX_RANK:
            raise ShapeError(f"tensor rank must be 1..{MAX_RANK}, got {arr.ndim}")
        if any(e < 1 for e in arr.shape):
            raise ShapeError(f"all extents must be >= 1, got shape {arr.shape}")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def rank(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> str:
        return _DTYPE_NAMES[self.data.dtype]

    @property
    def size(self) -> int:
        return self.data.size

    def astype(self, dtype: str) -> "Tensor":
        return Tensor(self.data, dtype=dtype)

    def numpy(self) -> np.ndarray:
        """Read-only view of the underlying array."""
        return self.data

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() requires a single element, shape is {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype})"

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Tensor)
            and self.dtype == other.dtype
            and self.shape == other.shape
            and np.array_equal(self.data, other.data)
        )

    def __hash__(self):  # pragma: no cover - tensors are not hashable
        raise TypeError("Tensor is unhashable")

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)


def tensor(values, dtype: str = "f32") -> Tensor:
    return Tensor(values, dtype=dtype)


def zeros(shape, dtype: str = "f32") -> Tensor:
    return Tensor(np.zeros(shape, dtype=_DTYPES[dtype]))


def full(shape, value, dtype: str = "f32") -> Tensor:
    return Tensor(np.full(shape, value, dtype=_DTYPES[dtype]))


def _arr(x) -> np.ndarray:
    """Unwrap to a float32 ndarray (f16 storage upcasts here)."""
    if isinstance(x, Tensor):
        x = x.data
    x = np.asarray(x)
    if x.dtype != np.float32:
        x = x.astype(np.float32)
    return x


# ---------------------------------------------------------------------------
# op tracing (used by the patch-op rewrite to prove no rank-6 permute runs)

_trace_state = threading.local()


@contextmanager
def trace_ops():
    """Collect (op, rank, detail) events for ops executed in this thread."""
    log: list[tuple] = []
    prev = getattr(_trace_state, "log", None)
    _trace_state.log = log
    try:
        yield log
    finally:
        _trace_state.log = prev


def _trace(op: str, rank: int, detail) -> None:
    log = getattr(_trace_state, "log", None)
    if log is not None:
        log.append((op, rank, detail))


# ---------------------------------------------------------------------------
# convolution and normalization


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride=(1, 1), padding=(0, 0), groups: int = 1) -> Tensor:
    """2-D cross-correlation over a [C_in, H, W] input.

    weight is [C_out, C_in/groups, kH, kW]; zero padding; output extents
    follow floor((H + 2p - k) / s) + 1.
    """
    xv, wv = _arr(x), _arr(weight)
    if xv.ndim != 3:
        raise ShapeError(f"conv2d: input must be rank 3 [C,H,W], got shape {xv.shape}")
    if wv.ndim != 4:
        raise ShapeError(f"conv2d: weight must be rank 4 [C_out,C_in/g,kH,kW], got shape {wv.shape}")
    sH, sW = (stride, stride) if isinstance(stride, int) else stride
    pH, pW = (padding, padding) if isinstance(padding, int) else padding
    c_in, H, W = xv.shape
    c_out, c_per_g, kH, kW = wv.shape
    if c_in % groups != 0:
        raise ShapeError(f"conv2d: input channels {c_in} (input axis 0) not divisible by groups={groups}")
    if c_out % groups != 0:
        raise ShapeError(f"conv2d: output channels {c_out} (weight axis 0) not divisible by groups={groups}")
    if c_per_g != c_in // groups:
        raise ShapeError(
            f"conv2d: weight axis 1 is {c_per_g}, expected C_in/groups = {c_in // groups}")
    Ho = (H + 2 * pH - kH) // sH + 1
    Wo = (W + 2 * pW - kW) // sW + 1
    if Ho < 1 or Wo < 1:
        raise ShapeError(f"conv2d: kernel {kH}x{kW} too large for padded input {H + 2 * pH}x{W + 2 * pW}")
    bv = None
    if bias is not None:
        bv = _arr(bias)
        if bv.shape != (c_out,):
            raise ShapeError(f"conv2d: bias axis 0 is {bv.shape}, expected ({c_out},)")

    if pH or pW:
        xv = np.pad(xv, ((0, 0), (pH, pH), (pW, pW)))
    # partial sums in f64, rounded once to f32
    win = sliding_window_view(xv, (kH, kW), axis=(1, 2))[:, ::sH, ::sW]  # [C,Ho,Wo,kH,kW]
    if groups == c_in and c_per_g == 1:
        # depthwise fast path: one output channel per input channel group
        mult = c_out // c_in
        w64 = wv.astype(np.float64).reshape(c_in, mult, kH, kW)
        out = np.einsum("chwab,cmab->cmhw", win.astype(np.float64), w64).reshape(c_out, Ho, Wo)
    elif groups == 1:
        cols = win.transpose(0, 3, 4, 1, 2).reshape(c_in * kH * kW, Ho * Wo).astype(np.float64)
        out = (wv.reshape(c_out, -1).astype(np.float64) @ cols).reshape(c_out, Ho, Wo)
    else:
        out = np.empty((c_out, Ho, Wo), np.float64)
        cg_out = c_out // groups
        for g in range(groups):
            wing = win[g * c_per_g:(g + 1) * c_per_g]
            cols = wing.transpose(0, 3, 4, 1, 2).reshape(c_per_g * kH * kW, Ho * Wo).astype(np.float64)
            wg = wv[g * cg_out:(g + 1) * cg_out].reshape(cg_out, -1).astype(np.float64)
            out[g * cg_out:(g + 1) * cg_out] = (wg @ cols).reshape(cg_out, Ho, Wo)
    if bv is not None:
        out = out + bv[:, None, None].astype(np.float64)
    return Tensor(out.astype(np.float32))


def instance_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-channel zero-mean unit-variance over HxW (population variance),
    followed by the affine gamma * y + beta."""
    xv = _arr(x)
    if xv.ndim != 3:
        raise ShapeError(f"instance_norm: input must be rank 3 [C,H,W], got shape {xv.shape}")
    g, b = _arr(gamma), _arr(beta)
    C = xv.shape[0]
    if g.shape != (C,) or b.shape != (C,):
        raise ShapeError(f"instance_norm: gamma/beta must be ({C},), got {g.shape} and {b.shape}")
    x64 = xv.astype(np.float64)
    mean = x64.mean(axis=(1, 2), keepdims=True)
    var = x64.var(axis=(1, 2), keepdims=True)
    y = (x64 - mean) / np.sqrt(var + eps)
    out = y.astype(np.float32) * g[:, None, None] + b[:, None, None]
    return Tensor(out.astype(np.float32))


# ---------------------------------------------------------------------------
# activations


def sigmoid(x: Tensor) -> Tensor:
    xv = _arr(x)
    e = np.exp(-np.abs(xv))
    out = np.where(xv >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return Tensor(out.astype(np.float32))


def relu(x: Tensor) -> Tensor:
    return Tensor(np.maximum(_arr(x), np.float32(0.0)))


def silu(x: Tensor) -> Tensor:
    xv = _arr(x)
    return Tensor((xv * sigmoid(Tensor(xv)).data).astype(np.float32))


ACTIVATIONS = {"sigmoid": sigmoid, "relu": relu, "silu": silu}


# ---------------------------------------------------------------------------
# shape ops


def reshape(x: Tensor, new_shape) -> Tensor:
    new_shape = tuple(int(e) for e in new_shape)
    if int(np.prod(new_shape)) != x.size:
        raise ShapeError(f"reshape: cannot view {x.shape} ({x.size} elements) as {new_shape}")
    if len(new_shape) < 1 or len(new_shape) > MAX_RANK:
        raise ShapeError(f"reshape: target rank {len(new_shape)} outside 1..{MAX_RANK}")
    return Tensor(x.data.reshape(new_shape), dtype=x.dtype)


def permute(x: Tensor, axis_order) -> Tensor:
    order = tuple(int(a) for a in axis_order)
    if sorted(order) != list(range(x.rank)):
        raise ShapeError(f"permute: {order} is not a permutation of axes 0..{x.rank - 1}")
    _trace("permute", x.rank, order)
    return Tensor(np.ascontiguousarray(x.data.transpose(order)), dtype=x.dtype)


def split(x: Tensor, axis: int, parts) -> list[Tensor]:
    axis = _check_axis(x, axis, "split")
    extent = x.shape[axis]
    if isinstance(parts, int):
        if extent % parts != 0:
            raise ShapeError(f"split: axis {axis} extent {extent} not divisible into {parts} parts")
        sizes = [extent // parts] * parts
    else:
        sizes = [int(p) for p in parts]
        if sum(sizes) != extent:
            raise ShapeError(f"split: sizes {sizes} do not sum to axis {axis} extent {extent}")
    pieces = np.split(x.data, np.cumsum(sizes)[:-1], axis=axis)
    return [Tensor(p, dtype=x.dtype) for p in pieces]


def concat(xs, axis: int) -> Tensor:
    if not xs:
        raise ShapeError("concat: need at least one tensor")
    axis = _check_axis(xs[0], axis, "concat")
    ref = xs[0].shape
    for k, t in enumerate(xs[1:], start=1):
        if t.rank != len(ref):
            raise ShapeError(f"concat: input {k} has rank {t.rank}, expected {len(ref)}")
        for a, (e, f) in enumerate(zip(ref, t.shape)):
            if a != axis and e != f:
                raise ShapeError(f"concat: input {k} disagrees on axis {a} ({f} vs {e})")
    dtype = xs[0].dtype
    return Tensor(np.concatenate([t.data for t in xs], axis=axis), dtype=dtype)


def squeeze(x: Tensor, axis: int) -> Tensor:
    axis = _check_axis(x, axis, "squeeze")
    if x.shape[axis] != 1:
        raise ShapeError(f"squeeze: axis {axis} has extent {x.shape[axis]}, expected 1")
    if x.rank == 1:
        raise ShapeError("squeeze: cannot squeeze a rank-1 tensor")
    return Tensor(np.squeeze(x.data, axis=axis), dtype=x.dtype)


def unsqueeze(x: Tensor, axis: int) -> Tensor:
    if x.rank + 1 > MAX_RANK:
        raise ShapeError(f"unsqueeze: result rank {x.rank + 1} exceeds {MAX_RANK}")
    if axis < 0:
        axis += x.rank + 1
    if axis < 0 or axis > x.rank:
        raise ShapeError(f"unsqueeze: axis {axis} outside 0..{x.rank}")
    return Tensor(np.expand_dims(x.data, axis=axis), dtype=x.dtype)


def _check_axis(x: Tensor, axis: int, op: str) -> int:
    if axis < 0:
        axis += x.rank
    if axis < 0 or axis >= x.rank:
        raise ShapeError(f"{op}: axis {axis} outside 0..{x.rank - 1}")
    return axis


# ---------------------------------------------------------------------------
# resampling


def upsample(x: Tensor, target, mode: str = "bilinear") -> Tensor:
    """Scale a [C, h, w] map up to [C, H, W].

    nearest copies source pixels (floor(dst * h / H) indexing); bilinear uses
    the align-corners=false convention, sampling source position
    (dst + 0.5) * h / H - 0.5 clamped to the valid range.
    """
    xv = _arr(x)
    if xv.ndim != 3:
        raise ShapeError(f"upsample: input must be rank 3 [C,h,w], got shape {xv.shape}")
    H, W = (int(target[0]), int(target[1]))
    c, h, w = xv.shape
    if H < h or W < w:
        raise ShapeError(f"upsample: target {H}x{W} smaller than input {h}x{w} (downscaling rejected)")
    if mode == "nearest":
        rows = np.floor(np.arange(H) * (h / H)).astype(np.int64)
        cols = np.floor(np.arange(W) * (w / W)).astype(np.int64)
        return Tensor(xv[:, rows][:, :, cols])
    if mode != "bilinear":
        raise ValueError(f"upsample: unknown mode {mode!r}")

    def axis_weights(n_out, n_in):
        src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1.0)
        lo = np.floor(src).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        frac = src - lo
        return lo, hi, frac

    r0, r1, fr = axis_weights(H, h)
    c0, c1, fc = axis_weights(W, w)
    x64 = xv.astype(np.float64)
    top = x64[:, r0][:, :, c0] * (1 - fc) + x64[:, r0][:, :, c1] * fc
    bot = x64[:, r1][:, :, c0] * (1 - fc) + x64[:, r1][:, :, c1] * fc
    out = top * (1 - fr)[None, :, None] + bot * fr[None, :, None]
    return Tensor(out.astype(np.float32))


# ---------------------------------------------------------------------------
# reductions, linear algebra, broadcast arithmetic


def softmax(x: Tensor, axis: int) -> Tensor:
    xv = _arr(x)
    axis = _check_axis(x, axis, "softmax")
    shifted = xv - xv.max(axis=axis, keepdims=True)
    e = np.exp(shifted.astype(np.float64))
    out = e / e.sum(axis=axis, keepdims=True)
    return Tensor(out.astype(np.float32))


def sum_(x: Tensor, axis: int | None = None) -> Tensor:
    """Sum with strict left-to-right f32 accumulation along the reduced axis."""
    xv = _arr(x)
    if axis is None:
        total = np.cumsum(xv.reshape(-1), dtype=np.float32)[-1]
        return Tensor(np.asarray([total], dtype=np.float32))
    axis = _check_axis(x, axis, "sum")
    acc = np.cumsum(xv, axis=axis, dtype=np.float32)
    out = np.take(acc, -1, axis=axis)
    if out.ndim == 0:
        out = out.reshape(1)
    return Tensor(out)


def matmul_batched(a: Tensor, b: Tensor) -> Tensor:
    av, bv = _arr(a), _arr(b)
    if av.ndim < 2 or bv.ndim < 2:
        raise ShapeError("matmul: operands must be at least rank 2")
    if av.shape[-1] != bv.shape[-2]:
        raise ShapeError(
            f"matmul: inner extents disagree, {av.shape[-1]} (a axis {av.ndim - 1}) "
            f"vs {bv.shape[-2]} (b axis {bv.ndim - 2})")
    try:
        out = np.matmul(av, bv)
    except ValueError as exc:
        raise ShapeError(f"matmul: batch axes not broadcastable ({av.shape} vs {bv.shape})") from exc
    return Tensor(out.astype(np.float32))


def add(a: Tensor, b) -> Tensor:
    return _broadcast_op(a, b, np.add, "add")


def mul(a: Tensor, b) -> Tensor:
    return _broadcast_op(a, b, np.multiply, "mul")


def _broadcast_op(a, b, fn, name) -> Tensor:
    av = _arr(a)
    bv = _arr(b) if isinstance(b, (Tensor, np.ndarray, list, tuple)) else np.float32(b)
    try:
        out = fn(av, bv)
    except ValueError as exc:
        raise ShapeError(f"{name}: shapes {np.shape(av)} and {np.shape(bv)} are not broadcastable") from exc
    return Tensor(out.astype(np.float32))
