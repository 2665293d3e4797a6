"""Parameterized layers built on the tensor ops.

Modules own their parameters (and, for normalization, running-stat
buffers) and expose them as flat name -> Tensor maps so checkpoints and
optimizers can address everything by dotted path.
"""

from __future__ import annotations

import contextlib

import numpy as np

from . import tensor as T
from .errors import ShapeMismatchError
from .tensor import Tensor

_STATS_FROZEN = False


@contextlib.contextmanager
def frozen_norm_stats():
    """Suppress running-statistic updates (used by the gradient checker,
    whose repeated evaluations must not drift the buffers)."""
    global _STATS_FROZEN
    prev = _STATS_FROZEN
    _STATS_FROZEN = True
    try:
        yield
    finally:
        _STATS_FROZEN = prev


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(T.default_dtype())


class Module:
    """Minimal parameter container with dotted-path introspection."""

    def params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                out[name] = value
            elif isinstance(value, Module):
                for sub, t in value.params().items():
                    out[f"{name}.{sub}"] = t
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        for sub, t in item.params().items():
                            out[f"{name}{i}.{sub}"] = t
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for name, value in vars(self).items():
            if isinstance(value, Module):
                for sub, b in value.buffers().items():
                    out[f"{name}.{sub}"] = b
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        for sub, b in item.buffers().items():
                            out[f"{name}{i}.{sub}"] = b
        return out

    def state(self) -> dict[str, np.ndarray]:
        flat = {name: t.data for name, t in self.params().items()}
        flat.update(self.buffers())
        return flat

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        params = self.params()
        buffers = self.buffers()
        for name, t in params.items():
            t.data = np.array(state[name], dtype=t.data.dtype)
        for name, b in buffers.items():
            b[...] = state[name]


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        self.weight = T.parameter(
            kaiming_uniform(rng, (in_features, out_features), fan_in=in_features)
        )
        self.bias = T.parameter(np.zeros(out_features))

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(
        self,
        in_ch: int,
        out_ch: int,
        kernel: int,
        rng: np.random.Generator,
        stride: int = 1,
        padding: int = 0,
        bias: bool = True,
    ):
        fan_in = in_ch * kernel * kernel
        self.weight = T.parameter(
            kaiming_uniform(rng, (out_ch, in_ch, kernel, kernel), fan_in=fan_in)
        )
        self.bias = T.parameter(np.zeros(out_ch)) if bias else None
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class BatchNorm2d(Module):
    """Per-channel affine batch normalization with running statistics.

    Training mode uses batch statistics over (B, H, W) and updates the
    running buffers with momentum 0.1; eval mode and batch size 1 fall
    back to the running statistics.
    """

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1):
        self.scale = T.parameter(np.ones(channels))
        self.shift = T.parameter(np.zeros(channels))
        self.eps = eps
        self.momentum = momentum
        self._running_mean = np.zeros(channels, dtype=np.float64)
        self._running_var = np.ones(channels, dtype=np.float64)

    def buffers(self) -> dict[str, np.ndarray]:
        return {"running_mean": self._running_mean, "running_var": self._running_var}

    def __call__(self, x: Tensor, training: bool = False) -> Tensor:
        if x.data.ndim != 4:
            raise ShapeMismatchError("batch_norm2d", f"need 4-d input, got {x.data.shape}")
        bsz = x.data.shape[0]
        if training and bsz > 1:
            mean = T.reduce_mean(x, axis=(0, 2, 3), keepdims=True)
            centered = T.add(x, T.scale(mean, -1.0))
            var = T.reduce_mean(T.mul(centered, centered), axis=(0, 2, 3), keepdims=True)
            if not _STATS_FROZEN:
                m = self.momentum
                n = x.data.shape[0] * x.data.shape[2] * x.data.shape[3]
                unbiased = var.data.reshape(-1) * n / max(1, n - 1)
                self._running_mean *= 1.0 - m
                self._running_mean += m * mean.data.reshape(-1)
                self._running_var *= 1.0 - m
                self._running_var += m * unbiased
            inv = T.pow_scalar(T.add(var, T.as_tensor(self.eps)), -0.5)
            xhat = T.mul(centered, inv)
        else:
            mean = self._running_mean.astype(x.data.dtype).reshape(1, -1, 1, 1)
            var = self._running_var.astype(x.data.dtype).reshape(1, -1, 1, 1)
            inv = ((var + self.eps) ** -0.5).astype(x.data.dtype)
            xhat = T.mul(T.add(x, T.as_tensor(-mean)), T.as_tensor(inv))
        gamma = T.reshape(self.scale, (1, -1, 1, 1))
        beta = T.reshape(self.shift, (1, -1, 1, 1))
        return T.add(T.mul(xhat, gamma), beta)


class ConvBnSiLU(Module):
    """conv -> batch-norm -> SiLU, the standard block in this model."""

    def __init__(self, in_ch, out_ch, kernel, rng, stride=1, padding=0):
        self.conv = Conv2d(in_ch, out_ch, kernel, rng, stride=stride, padding=padding, bias=False)
        self.norm = BatchNorm2d(out_ch)

    def __call__(self, x: Tensor, training: bool = False) -> Tensor:
        return T.silu(self.norm(self.conv(x), training=training))
