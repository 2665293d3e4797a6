"""Dense n-d tensors with reverse-mode gradient propagation.

Everything is numpy-backed and eager: each op computes its result
immediately and records a backward closure, so ``backward()`` can fill
gradient slots by walking the recorded graph in reverse topological
order. The op set is exactly what the detector and the expert-mixture
block need. All ops are deterministic: fixed (row-major) summation
order, no threading, no stochastic kernels.

Training defaults to float32; wrap code in ``use_dtype(np.float64)``
for gradient testing, which removes finite-difference noise.
"""

from __future__ import annotations

import contextlib
from typing import Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NonScalarLossError, ShapeMismatchError

_DEFAULT_DTYPE = np.float32
_GRAD_ENABLED = True


def default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def use_dtype(dtype):
    """Temporarily change the dtype used for new leaf tensors."""
    global _DEFAULT_DTYPE
    prev = _DEFAULT_DTYPE
    _DEFAULT_DTYPE = np.dtype(dtype).type
    try:
        yield
    finally:
        _DEFAULT_DTYPE = prev


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (inference / evaluation paths)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """A dense array plus an optional same-shape gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(_DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype)
        else:
            self.grad += g

    def backward(self) -> None:
        """Fill grad slots of everything reachable from this scalar."""
        if self.data.size != 1:
            raise NonScalarLossError(
                f"backward() needs a scalar, got shape {self.data.shape}"
            )
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Tensor(shape={self.data.shape}, op={self.op!r})"

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __sub__(self, other):
        return add(self, scale(as_tensor(other), -1.0))

    def __neg__(self):
        return scale(self, -1.0)


def as_tensor(x, requires_grad: bool = False) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=_DEFAULT_DTYPE), requires_grad=requires_grad)


def parameter(data) -> Tensor:
    return Tensor(np.asarray(data, dtype=_DEFAULT_DTYPE), requires_grad=True)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] > 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise ops


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def backward(g):
        a.accumulate_grad(_unbroadcast(g, a.data.shape))
        b.accumulate_grad(_unbroadcast(g, b.data.shape))

    return _make(data, (a, b), backward, "add")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def backward(g):
        a.accumulate_grad(_unbroadcast(g * b.data, a.data.shape))
        b.accumulate_grad(_unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), backward, "mul")


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    data = a.data * c

    def backward(g):
        a.accumulate_grad(g * c)

    return _make(data, (a,), backward, "scale")


def pow_scalar(a, p: float) -> Tensor:
    a = as_tensor(a)
    p = float(p)
    data = a.data**p

    def backward(g):
        a.accumulate_grad(g * p * a.data ** (p - 1.0))

    return _make(data, (a,), backward, "pow")


def exp(a) -> Tensor:
    a = as_tensor(a)
    data = np.exp(a.data)

    def backward(g):
        a.accumulate_grad(g * data)

    return _make(data, (a,), backward, "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    data = np.log(a.data)

    def backward(g):
        a.accumulate_grad(g / a.data)

    return _make(data, (a,), backward, "log")


def maximum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    mask = a.data >= b.data  # ties route to the first argument
    data = np.where(mask, a.data, b.data)

    def backward(g):
        a.accumulate_grad(_unbroadcast(g * mask, a.data.shape))
        b.accumulate_grad(_unbroadcast(g * ~mask, b.data.shape))

    return _make(data, (a, b), backward, "maximum")


def minimum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    mask = a.data <= b.data
    data = np.where(mask, a.data, b.data)

    def backward(g):
        a.accumulate_grad(_unbroadcast(g * mask, a.data.shape))
        b.accumulate_grad(_unbroadcast(g * ~mask, b.data.shape))

    return _make(data, (a, b), backward, "minimum")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    data = _stable_sigmoid(a.data)

    def backward(g):
        a.accumulate_grad(g * data * (1.0 - data))

    return _make(data, (a,), backward, "sigmoid")


def silu(a) -> Tensor:
    a = as_tensor(a)
    s = _stable_sigmoid(a.data)
    data = a.data * s

    def backward(g):
        a.accumulate_grad(g * (s + a.data * s * (1.0 - s)))

    return _make(data, (a,), backward, "silu")


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(a, axis: int) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        a.accumulate_grad((g - dot) * data)

    return _make(data, (a,), backward, "softmax")


# ---------------------------------------------------------------------------
# reductions and reshaping


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            a.accumulate_grad(np.broadcast_to(g, a.data.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        a.accumulate_grad(np.broadcast_to(g, a.data.shape).copy())

    return _make(np.asarray(data), (a,), backward, "reduce_sum")


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for ax in axes:
            count *= a.data.shape[ax]
    return scale(reduce_sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    data = a.data.reshape(shape)

    def backward(g):
        a.accumulate_grad(g.reshape(a.data.shape))

    return _make(data, (a,), backward, "reshape")


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    data = a.data.transpose(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        a.accumulate_grad(g.transpose(inverse))

    return _make(data, (a,), backward, "transpose")


def concat(tensors: Iterable[Tensor], axis: int) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(ts, np.split(g, splits, axis=axis)):
            t.accumulate_grad(piece)

    return _make(data, ts, backward, "concat")


def take(a, indices, axis: int) -> Tensor:
    """Gather slices along ``axis``; duplicates accumulate on backward."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    data = np.take(a.data, idx, axis=axis)

    def backward(g):
        full = np.zeros_like(a.data)
        sel = [slice(None)] * a.data.ndim
        sel[axis] = idx
        np.add.at(full, tuple(sel), g)
        a.accumulate_grad(full)

    return _make(data, (a,), backward, "take")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeMismatchError(
            "matmul", f"got {a.data.shape} @ {b.data.shape}"
        )
    data = a.data @ b.data

    def backward(g):
        a.accumulate_grad(g @ b.data.T)
        b.accumulate_grad(a.data.T @ g)

    return _make(data, (a, b), backward, "matmul")


# ---------------------------------------------------------------------------
# neural-net ops


def linear(x, w, b=None) -> Tensor:
    """x (N, in) @ w (in, out) + b (out,)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise ShapeMismatchError(
            "linear", f"input {x.data.shape} vs weight {w.data.shape}"
        )
    out = matmul(x, w)
    if b is not None:
        out = add(out, b)
    return out


def conv2d(x, w, b=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Direct (im2col) 2-d convolution on (B, C, H, W).

    Weight layout is (Cout, Cin, kh, kw). Deterministic: one matmul per
    call, row-major gather order.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeMismatchError(
            "conv2d", f"need 4-d input/weight, got {x.data.shape}, {w.data.shape}"
        )
    bsz, cin, h, wd = x.data.shape
    cout, cin_w, kh, kw = w.data.shape
    if cin != cin_w:
        raise ShapeMismatchError(
            "conv2d", f"input channels {cin} vs weight channels {cin_w}"
        )
    if h + 2 * padding < kh or wd + 2 * padding < kw:
        raise ShapeMismatchError(
            "conv2d", f"kernel {kh}x{kw} larger than padded input {h}x{wd} (pad {padding})"
        )
    xp = x.data
    if padding:
        xp = np.pad(
            xp, ((0, 0), (0, 0), (padding, padding), (padding, padding))
        )
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # (B, Cin, Ho, Wo, kh, kw) -> (B*Ho*Wo, Cin*kh*kw)
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
        bsz * ho * wo, cin * kh * kw
    )
    wmat = w.data.reshape(cout, cin * kh * kw).T
    flat = cols @ wmat
    if b is not None:
        flat = flat + b.data
    data = flat.reshape(bsz, ho, wo, cout).transpose(0, 3, 1, 2)

    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        gmat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(
            bsz * ho * wo, cout
        )
        w.accumulate_grad((gmat.T @ cols).reshape(cout, cin, kh, kw))
        if b is not None:
            b.accumulate_grad(gmat.sum(axis=0))
        dcols = (gmat @ wmat.T).reshape(bsz, ho, wo, cin, kh, kw)
        dxp = np.zeros(
            (bsz, cin, h + 2 * padding, wd + 2 * padding), dtype=x.data.dtype
        )
        for u in range(kh):
            for v in range(kw):
                dxp[:, :, u : u + ho * stride : stride, v : v + wo * stride : stride] += (
                    dcols[:, :, :, :, u, v].transpose(0, 3, 1, 2)
                )
        if padding:
            dxp = dxp[:, :, padding:-padding, padding:-padding]
        x.accumulate_grad(dxp)

    return _make(data, parents, backward, "conv2d")


def global_avg_pool(x) -> Tensor:
    """(B, C, H, W) -> (B, C) spatial mean."""
    x = as_tensor(x)
    if x.data.ndim != 4:
        raise ShapeMismatchError("global_avg_pool", f"need 4-d input, got {x.data.shape}")
    bsz, c, h, w = x.data.shape
    data = x.data.mean(axis=(2, 3))

    def backward(g):
        x.accumulate_grad(
            np.broadcast_to(g[:, :, None, None] / (h * w), x.data.shape).copy()
        )

    return _make(data, (x,), backward, "global_avg_pool")


def upsample_nearest2x(x) -> Tensor:
    x = as_tensor(x)
    if x.data.ndim != 4:
        raise ShapeMismatchError("upsample_nearest2x", f"need 4-d input, got {x.data.shape}")
    data = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)
    bsz, c, h, w = x.data.shape

    def backward(g):
        x.accumulate_grad(g.reshape(bsz, c, h, 2, w, 2).sum(axis=(3, 5)))

    return _make(data, (x,), backward, "upsample_nearest2x")


def top_k_indices(values: np.ndarray | Tensor, k: int) -> np.ndarray:
    """Indices of the k largest entries per row, ties broken by lowest index.

    Non-differentiable by design: returns a plain integer array. Gradients
    flow only through values gathered at these indices, never through the
    index choice itself.
    """
    v = values.data if isinstance(values, Tensor) else np.asarray(values)
    order = np.argsort(-v, axis=-1, kind="stable")
    return order[..., :k]


# ---------------------------------------------------------------------------
# fused losses (numerically stable forward, hand-derived backward)


def bce_with_logits(logits, targets) -> Tensor:
    """Elementwise binary cross-entropy on raw logits."""
    x = as_tensor(logits)
    y = np.asarray(targets, dtype=x.data.dtype)
    if y.shape != x.data.shape:
        raise ShapeMismatchError(
            "bce_with_logits", f"logits {x.data.shape} vs targets {y.shape}"
        )
    data = np.maximum(x.data, 0.0) - x.data * y + np.log1p(np.exp(-np.abs(x.data)))

    def backward(g):
        x.accumulate_grad(g * (_stable_sigmoid(x.data) - y))

    return _make(data, (x,), backward, "bce_with_logits")


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Per-row cross-entropy of (N, C) logits against integer labels."""
    x = as_tensor(logits)
    idx = np.asarray(labels, dtype=np.intp)
    if x.data.ndim != 2 or idx.shape != (x.data.shape[0],):
        raise ShapeMismatchError(
            "softmax_cross_entropy", f"logits {x.data.shape} vs labels {idx.shape}"
        )
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1)) + x.data.max(axis=1)
    data = lse - x.data[np.arange(len(idx)), idx]

    def backward(g):
        soft = np.exp(shifted)
        soft /= soft.sum(axis=1, keepdims=True)
        soft[np.arange(len(idx)), idx] -= 1.0
        x.accumulate_grad(soft * g[:, None])

    return _make(data, (x,), backward, "softmax_cross_entropy")
