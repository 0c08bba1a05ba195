"""Reverse-mode gradients for the generator head and its losses.

A small tape over plain numpy arrays covering exactly the op set the head
needs: conv2d, instance norm, sigmoid, relu, broadcast mul/add, the edge-to-
point product, sum-normalization, the grid expectation behind soft-argmax,
and the two losses. Values may be float32 (training) or float64 (finite-
difference verification). Forward kernels mirror the inference path: partial
sums run in float64 and round once to the working dtype, so replaying a tape
reproduces the inference forward bit-for-bit at float32.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError


class NonFiniteGradientError(FloatingPointError):
    pass


class UnsupportedOpError(TypeError):
    pass


class Var:
    """Node in the op graph: a value plus the closure propagating its grad."""

    __slots__ = ("value", "grad", "parents", "_backward", "op")

    def __init__(self, value, parents=(), backward=None, op="const"):
        self.value = np.asarray(value)
        self.grad = None
        self.parents = tuple(parents)
        self._backward = backward
        self.op = op

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype


def _val(x):
    return x.value if isinstance(x, Var) else np.asarray(x)


def _as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _result_dtype(*arrays):
    return np.float64 if any(a.dtype == np.float64 for a in arrays) else np.float32


def _accumulate(var: Var, grad: np.ndarray) -> None:
    grad = grad.astype(var.value.dtype, copy=False)
    if var.grad is None:
        var.grad = grad.copy()
    else:
        var.grad = var.grad + grad


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def backward(loss: Var, seed: float = 1.0) -> None:
    """Propagate d(loss)/d(node) to every reachable node's .grad."""
    if loss.value.size != 1:
        raise ShapeError(f"backward expects a scalar loss, got shape {loss.shape}")
    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            stack.append((p, False))
    loss.grad = np.full_like(loss.value, seed)
    for node in reversed(order):
        if node.grad is not None and node._backward is not None:
            node._backward(node.grad.astype(np.float64, copy=False))


class GradTape:
    """Named-parameter view over a Var graph.

    Parameters are registered by canonical weight name; after running a
    forward builder and calling `gradients`, the returned buffers align with
    those names. Replaying the builder reproduces the forward value exactly
    (all ops are deterministic pure functions).
    """

    def __init__(self):
        self.params: dict[str, Var] = {}

    def param(self, name: str, value) -> Var:
        if name in self.params:
            raise ValueError(f"parameter {name!r} already on the tape")
        v = Var(np.asarray(value), op="param")
        self.params[name] = v
        return v

    def run(self, builder) -> Var:
        loss = builder(self.params)
        if not isinstance(loss, Var):
            raise UnsupportedOpError("forward builder must return a Var")
        return loss

    def gradients(self, loss: Var) -> dict[str, np.ndarray]:
        for v in self.params.values():
            v.grad = None
        backward(loss)
        return {name: (v.grad if v.grad is not None else np.zeros_like(v.value))
                for name, v in self.params.items()}


# ---------------------------------------------------------------------------
# ops


def add(a, b) -> Var:
    a, b = _as_var(a), _as_var(b)
    dt = _result_dtype(a.value, b.value)
    out = Var((a.value + b.value).astype(dt), (a, b), op="add")

    def back(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    out._backward = back
    return out


def mul(a, b) -> Var:
    a, b = _as_var(a), _as_var(b)
    dt = _result_dtype(a.value, b.value)
    out = Var((a.value * b.value).astype(dt), (a, b), op="mul")

    def back(g):
        _accumulate(a, _unbroadcast(g * b.value, a.shape))
        _accumulate(b, _unbroadcast(g * a.value, b.shape))

    out._backward = back
    return out


def sigmoid(x) -> Var:
    x = _as_var(x)
    xv = x.value
    e = np.exp(-np.abs(xv))
    y = np.where(xv >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(xv.dtype)
    out = Var(y, (x,), op="sigmoid")

    def back(g):
        _accumulate(x, g * y * (1.0 - y))

    out._backward = back
    return out


def relu(x) -> Var:
    x = _as_var(x)
    out = Var(np.maximum(x.value, 0), (x,), op="relu")

    def back(g):
        _accumulate(x, g * (x.value > 0))

    out._backward = back
    return out


def conv2d(x, weight, bias=None, stride=1, padding=0) -> Var:
    """Cross-correlation over [C,H,W]; groups other than 1 are outside the
    supported head op set."""
    x, weight = _as_var(x), _as_var(weight)
    bias = _as_var(bias) if bias is not None else None
    xv, wv = x.value, weight.value
    if xv.ndim != 3 or wv.ndim != 4:
        raise ShapeError(f"conv2d: input rank {xv.ndim}, weight rank {wv.ndim}")
    if wv.shape[1] != xv.shape[0]:
        raise UnsupportedOpError(
            f"tape conv2d supports groups=1 only (weight expects {wv.shape[1]} input "
            f"channels, input has {xv.shape[0]})")
    sH, sW = (stride, stride) if isinstance(stride, int) else stride
    pH, pW = (padding, padding) if isinstance(padding, int) else padding
    c_in, H, W = xv.shape
    c_out, _, kH, kW = wv.shape
    Ho = (H + 2 * pH - kH) // sH + 1
    Wo = (W + 2 * pW - kW) // sW + 1
    dt = _result_dtype(xv, wv)
    xp = np.pad(xv, ((0, 0), (pH, pH), (pW, pW))) if (pH or pW) else xv
    win = sliding_window_view(xp, (kH, kW), axis=(1, 2))[:, ::sH, ::sW]
    cols = win.transpose(0, 3, 4, 1, 2).reshape(c_in * kH * kW, Ho * Wo).astype(np.float64)
    out64 = wv.reshape(c_out, -1).astype(np.float64) @ cols
    if bias is not None:
        out64 = out64 + bias.value[:, None].astype(np.float64)
    out = Var(out64.reshape(c_out, Ho, Wo).astype(dt), tuple(
        p for p in (x, weight, bias) if p is not None), op="conv2d")

    def back(g):
        gf = g.reshape(c_out, -1)
        _accumulate(weight, (gf @ cols.T).reshape(wv.shape))
        if bias is not None:
            _accumulate(bias, g.sum(axis=(1, 2)))
        dcols = wv.reshape(c_out, -1).T.astype(np.float64) @ gf
        dcols = dcols.reshape(c_in, kH, kW, Ho, Wo)
        dxp = np.zeros((c_in, H + 2 * pH, W + 2 * pW), np.float64)
        for a in range(kH):
            for b in range(kW):
                dxp[:, a:a + Ho * sH:sH, b:b + Wo * sW:sW] += dcols[:, a, b]
        _accumulate(x, dxp[:, pH:pH + H, pW:pW + W])

    out._backward = back
    return out


def instance_norm(x, gamma, beta, eps: float = 1e-5) -> Var:
    x, gamma, beta = _as_var(x), _as_var(gamma), _as_var(beta)
    xv = x.value
    if xv.ndim != 3:
        raise ShapeError(f"instance_norm: input must be [C,H,W], got {xv.shape}")
    dt = _result_dtype(xv, gamma.value)
    x64 = xv.astype(np.float64)
    mean = x64.mean(axis=(1, 2), keepdims=True)
    var = x64.var(axis=(1, 2), keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat64 = (x64 - mean) * inv_std
    if dt == np.float32:
        y = xhat64.astype(np.float32) * gamma.value[:, None, None] + beta.value[:, None, None]
    else:
        y = xhat64 * gamma.value[:, None, None] + beta.value[:, None, None]
    out = Var(y.astype(dt), (x, gamma, beta), op="instance_norm")

    def back(g):
        m = xv.shape[1] * xv.shape[2]
        _accumulate(beta, g.sum(axis=(1, 2)))
        _accumulate(gamma, (g * xhat64).sum(axis=(1, 2)))
        dxhat = g * gamma.value.astype(np.float64)[:, None, None]
        term = dxhat - dxhat.mean(axis=(1, 2), keepdims=True) \
            - xhat64 * (dxhat * xhat64).sum(axis=(1, 2), keepdims=True) / m
        _accumulate(x, term * inv_std)

    out._backward = back
    return out


def e2p(edge, incidence) -> Var:
    """Per-landmark product of incident edge maps (composed elementwise mul)."""
    edge = _as_var(edge)
    a = np.asarray(incidence)
    ev = edge.value
    n, e_count = a.shape
    masks = np.ones((n, *ev.shape[1:]), dtype=ev.dtype)
    for e in range(e_count):
        rows = np.flatnonzero(a[:, e])
        if rows.size:
            masks[rows] *= ev[e]
    out = Var(masks, (edge,), op="e2p")

    def back(g):
        dedge = np.zeros_like(ev, dtype=np.float64)
        for i in range(n):
            incident = np.flatnonzero(a[i])
            for e in incident:
                partial = np.ones(ev.shape[1:], np.float64)
                for other in incident:
                    if other != e:
                        partial *= ev[other]
                dedge[e] += g[i] * partial
        _accumulate(edge, dedge)

    out._backward = back
    return out


def sum_normalize(x, eps: float = 1e-6) -> Var:
    """Per-channel x / (sum(x) + eps) over the spatial axes."""
    x = _as_var(x)
    xv = x.value
    if xv.ndim != 3:
        raise ShapeError(f"sum_normalize: input must be [N,h,w], got {xv.shape}")
    denom = xv.astype(np.float64).sum(axis=(1, 2), keepdims=True) + eps
    out = Var((xv / denom).astype(xv.dtype), (x,), op="sum_normalize")

    def back(g):
        inner = (g * xv).sum(axis=(1, 2), keepdims=True)
        _accumulate(x, g / denom - inner / (denom * denom))

    out._backward = back
    return out


def grid_expectation(dist, xs, ys) -> Var:
    """Coordinates [N,2] as the expectation of cell-center positions under a
    per-channel distribution; the decode step of soft-argmax."""
    dist = _as_var(dist)
    dv = dist.value
    xs64, ys64 = np.asarray(xs, np.float64), np.asarray(ys, np.float64)
    cx = dv.astype(np.float64).sum(axis=1) @ xs64
    cy = dv.astype(np.float64).sum(axis=2) @ ys64
    out = Var(np.stack([cx, cy], axis=1).astype(dv.dtype), (dist,), op="grid_expectation")

    def back(g):
        dd = g[:, 0, None, None] * xs64[None, None, :] + g[:, 1, None, None] * ys64[None, :, None]
        _accumulate(dist, dd)

    out._backward = back
    return out


def soft_argmax(heatmap, scale: float, eps: float = 1e-6) -> Var:
    """Sum-normalized decode; the all-zero fallback branch of the inference
    decoder is non-differentiable and not represented here."""
    h, w = _val(heatmap).shape[1:]
    xs = (np.arange(w, dtype=np.float64) + 0.5) * scale
    ys = (np.arange(h, dtype=np.float64) + 0.5) * scale
    return grid_expectation(sum_normalize(heatmap, eps), xs, ys)


def kd_l2(student, teacher) -> Var:
    """Sum over landmarks of the per-landmark Euclidean distance between
    student and teacher heatmaps; zero-distance landmarks use subgradient 0."""
    student = _as_var(student)
    tv = _val(teacher).astype(np.float64)
    sv = student.value.astype(np.float64)
    if tv.shape != sv.shape:
        raise ShapeError(f"kd_l2: teacher {tv.shape} vs student {sv.shape}")
    diff = sv - tv
    norms = np.sqrt((diff * diff).sum(axis=(1, 2)))
    out = Var(np.asarray(norms.sum(), dtype=student.value.dtype), (student,), op="kd_l2")

    def back(g):
        safe = np.where(norms > 0, norms, 1.0)
        grad = diff / safe[:, None, None]
        grad[norms == 0] = 0.0
        _accumulate(student, float(g) * grad)

    out._backward = back
    return out


def l2_reg(coords, gt) -> Var:
    """Mean over landmarks of the squared Euclidean coordinate error."""
    coords = _as_var(coords)
    gv = _val(gt).astype(np.float64)
    cv = coords.value.astype(np.float64)
    if cv.shape != gv.shape:
        raise ShapeError(f"l2_reg: predictions {cv.shape} vs ground truth {gv.shape}")
    diff = cv - gv
    n = cv.shape[0]
    out = Var(np.asarray((diff * diff).sum() / n, dtype=coords.value.dtype), (coords,), op="l2_reg")

    def back(g):
        _accumulate(coords, float(g) * 2.0 * diff / n)

    out._backward = back
    return out
