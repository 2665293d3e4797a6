"""Sparse expert-mixture block: router, expert pool, top-K conditional
forward, utilization-balancing auxiliary loss, and the per-iteration
loss collector.

Routing is per sample: the router pools the feature map to a channel
descriptor, produces one logit per expert, and the K largest logits pick
the experts that actually run. Selected-expert weights are the softmax
over the selected logits only. The auxiliary loss is the squared
coefficient of variation of both the batch-mean routing probabilities
(importance) and the empirical selection frequencies (load); it ramps in
linearly over the first warmup iterations.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .nn import tensor as T


class MoEError(Exception):
    pass


class ChannelMismatchError(MoEError):
    pass


class CollectorMissingError(MoEError):
    pass


class ZeroMeanStatsError(MoEError):
    pass


@dataclass(frozen=True)
class MoEConfig:
    num_experts: int = 4
    top_k: int = 2
    in_channels: int = 64
    hidden_channels: int = 32
    out_channels: int = 32
    lambda0: float = 0.01
    warmup_iters: int = 100

    def __post_init__(self):
        if not 1 <= self.top_k <= self.num_experts:
            raise ValueError(f"top_k must be in [1, {self.num_experts}], got {self.top_k}")
        if self.lambda0 < 0:
            raise ValueError("lambda0 must be nonnegative")
        if self.warmup_iters < 1:
            raise ValueError("warmup_iters must be >= 1")


@dataclass
class RoutingDecision:
    """Per-sample router output: raw logits, full softmax, the selected
    expert indices (descending logit order, ties to the lowest index),
    and the renormalized weights over the selection."""

    logits: np.ndarray
    probs: np.ndarray
    selected: np.ndarray
    weights: np.ndarray


@dataclass
class BatchRoutingStats:
    """importance: batch mean of routing probabilities (sums to 1);
    load: per-expert fraction of samples that selected it (sums to K)."""

    importance: np.ndarray
    load: np.ndarray


@dataclass
class AuxLossCollector:
    """Accumulates the weighted auxiliary loss terms of one training
    iteration; drained exactly once, after the forward pass."""

    pending: list = field(default_factory=list)
    _drained: bool = False

    def reset(self) -> None:
        self.pending.clear()
        self._drained = False

    def add(self, term) -> None:
        self.pending.append(term)
        self._drained = False

    def drain(self):
        """Return the sum of pending terms and empty the collector.

        An empty fresh collector drains to 0.0; draining twice in a row
        warns and returns 0.0 (a sequencing bug upstream, not fatal).
        """
        if self._drained and not self.pending:
            warnings.warn("auxiliary collector drained twice without a forward in between")
            return 0.0
        terms = self.pending
        self.pending = []
        self._drained = True
        if not terms:
            return 0.0
        total = terms[0]
        for t in terms[1:]:
            total = T.add(total, t)
        return total


def warmup_weight(t: int, lambda0: float, warmup_iters: int) -> float:
    """Linear ramp from 0 to lambda0 over the first warmup_iters iterations."""
    return lambda0 * min(1.0, t / warmup_iters)


def cv_squared(values: np.ndarray) -> float:
    """Population variance over squared mean; 0 exactly at uniformity."""
    v = np.asarray(values, dtype=np.float64)
    mean = v.mean()
    if mean == 0.0:
        raise ZeroMeanStatsError("all-zero statistics vector; upstream routing is broken")
    return float(((v - mean) ** 2).mean() / mean**2)


def aux_balance_loss(stats: BatchRoutingStats) -> float:
    """CV²(importance) + CV²(load) as a plain number (reporting path)."""
    return cv_squared(stats.importance) + cv_squared(stats.load / stats.load.sum())


def _cv_squared_tensor(vec: nn.Tensor) -> nn.Tensor:
    if float(vec.data.mean()) == 0.0:
        raise ZeroMeanStatsError("all-zero statistics vector; upstream routing is broken")
    mean = T.reduce_mean(vec)
    centered = T.add(vec, T.scale(mean, -1.0))
    var = T.reduce_mean(T.mul(centered, centered))
    return T.mul(var, T.pow_scalar(T.mul(mean, mean), -1.0))


def routing_decisions(logits: np.ndarray, top_k: int) -> list[RoutingDecision]:
    """Decisions for a (B, E) logit matrix: top-K selection in descending
    logit order (ties to the lowest index), weights renormalized over the
    selected logits only."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    selected = T.top_k_indices(logits, top_k)
    decisions = []
    for i in range(logits.shape[0]):
        z = logits[i]
        shifted = z - z.max()
        full = np.exp(shifted)
        full /= full.sum()
        zs = z[selected[i]]
        w = np.exp(zs - zs.max())
        w /= w.sum()
        decisions.append(
            RoutingDecision(logits=z.copy(), probs=full, selected=selected[i].copy(), weights=w)
        )
    return decisions


class Expert(nn.Module):
    """conv3x3 -> batch-norm -> SiLU -> pointwise projection."""

    def __init__(self, in_ch: int, hidden_ch: int, out_ch: int, rng: np.random.Generator):
        self.body = nn.ConvBnSiLU(in_ch, hidden_ch, 3, rng, padding=1)
        self.proj = nn.Conv2d(hidden_ch, out_ch, 1, rng)
        self.eval_count = 0  # instrumentation: sparsity tests read this

    def __call__(self, x: nn.Tensor, training: bool = False) -> nn.Tensor:
        self.eval_count += 1
        return self.proj(self.body(x, training=training))


class Router(nn.Module):
    """Pooled channel descriptor -> small MLP -> one logit per expert."""

    def __init__(self, in_ch: int, num_experts: int, rng: np.random.Generator):
        hidden = max(8, in_ch // 4)
        self.fc1 = nn.Linear(in_ch, hidden, rng)
        self.fc2 = nn.Linear(hidden, num_experts, rng)

    def __call__(self, x: nn.Tensor) -> nn.Tensor:
        pooled = T.global_avg_pool(x)
        return self.fc2(T.silu(self.fc1(pooled)))


class MoEBlock(nn.Module):
    def __init__(self, config: MoEConfig, rng: np.random.Generator):
        self.config = config
        self.router = Router(config.in_channels, config.num_experts, rng)
        self.experts = [
            Expert(config.in_channels, config.hidden_channels, config.out_channels, rng)
            for _ in range(config.num_experts)
        ]
        self.last_stats: BatchRoutingStats | None = None

    # named per the serialized layout: moe.router.*, moe.expert{i}.*
    def params(self) -> dict[str, nn.Tensor]:
        out = {}
        for sub, t in self.router.params().items():
            out[f"router.{sub}"] = t
        for i, e in enumerate(self.experts):
            for sub, t in e.params().items():
                out[f"expert{i}.{sub}"] = t
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for sub, b in self.router.buffers().items():
            out[f"router.{sub}"] = b
        for i, e in enumerate(self.experts):
            for sub, b in e.buffers().items():
                out[f"expert{i}.{sub}"] = b
        return out

    def _check_channels(self, x: nn.Tensor) -> None:
        if x.data.shape[1] != self.config.in_channels:
            raise ChannelMismatchError(
                f"expected {self.config.in_channels} input channels, got {x.data.shape[1]}"
            )

    def route(self, features: nn.Tensor) -> list[RoutingDecision]:
        """Routing decisions only (no expert execution), one per sample."""
        self._check_channels(features)
        with nn.no_grad():
            logits = self.router(features)
        return routing_decisions(logits.data, self.config.top_k)

    def min_topk_margin(self, features: nn.Tensor) -> float:
        """Smallest gap between the K-th and (K+1)-th logits over the batch;
        the gradient checker uses this to reject tie points."""
        with nn.no_grad():
            logits = self.router(features).data
        k = self.config.top_k
        if k >= self.config.num_experts:
            return np.inf
        srt = np.sort(logits, axis=1)[:, ::-1]
        return float((srt[:, k - 1] - srt[:, k]).min())

    def forward(
        self,
        features: nn.Tensor,
        training: bool = False,
        collector: AuxLossCollector | None = None,
        iteration: int = 0,
    ) -> nn.Tensor:
        """Conditional forward: per sample, only the K selected experts run,
        and their outputs combine with the renormalized routing weights.

        In training mode the warmup-weighted auxiliary balancing loss of
        this batch is appended to the collector.
        """
        self._check_channels(features)
        cfg = self.config
        if training and collector is None:
            raise CollectorMissingError("training forward needs an AuxLossCollector")

        logits = self.router(features)  # (B, E), differentiable
        bsz = features.data.shape[0]
        selected = T.top_k_indices(logits.data, cfg.top_k)  # (B, K) index choice carries no gradient

        outs = []
        for i in range(bsz):
            xi = T.take(features, [i], axis=0)
            zi = T.take(T.take(logits, [i], axis=0), selected[i].tolist(), axis=1)
            alpha = T.softmax(zi, axis=1)  # (1, K)
            acc = None
            for j, e in enumerate(selected[i]):
                yi = self.experts[int(e)](xi, training=training)
                aj = T.reshape(T.take(alpha, [j], axis=1), (1, 1, 1, 1))
                term = T.mul(yi, aj)
                acc = term if acc is None else T.add(acc, term)
            outs.append(acc)
        out = T.concat(outs, axis=0) if bsz > 1 else outs[0]

        probs = T.softmax(logits, axis=1)
        counts = np.bincount(selected.reshape(-1), minlength=cfg.num_experts)
        load = counts.astype(np.float64) / bsz  # fraction of samples per expert, sums to K
        self.last_stats = BatchRoutingStats(
            importance=probs.data.mean(axis=0).astype(np.float64), load=load
        )

        if training:
            importance = T.reduce_mean(probs, axis=0)  # differentiable
            aux = T.add(
                _cv_squared_tensor(importance),
                T.as_tensor(cv_squared(load / cfg.top_k)),  # counting statistic, constant
            )
            lam = warmup_weight(iteration, cfg.lambda0, cfg.warmup_iters)
            collector.add(T.scale(aux, lam))
        return out

    __call__ = forward
