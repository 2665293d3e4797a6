"""Named-tensor graph wrapper and the finite-difference gradient checker.

A Graph bundles a pure build function with the names it expects, so
callers can evaluate, backprop, and gradient-check through one uniform
surface without caring how the function composes the underlying ops.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import MissingTensorError, NonScalarLossError, TieAtCheckpointError
from .modules import frozen_norm_stats
from .tensor import Tensor


@dataclass
class Graph:
    """An ordered application of ops, expressed as a pure function of
    named parameters and named inputs."""

    fn: Callable[[Mapping[str, Tensor], Mapping[str, Tensor]], dict[str, Tensor]]
    param_names: tuple[str, ...] = ()
    input_names: tuple[str, ...] = ()
    rng_seed: int = 0


def evaluate(
    graph: Graph, params: Mapping[str, Tensor], inputs: Mapping[str, Tensor]
) -> dict[str, Tensor]:
    """Run the graph once; deterministic for identical arguments."""
    for name in graph.param_names:
        if name not in params:
            raise MissingTensorError(f"parameter {name!r} not supplied")
    for name in graph.input_names:
        if name not in inputs:
            raise MissingTensorError(f"input {name!r} not supplied")
    return graph.fn(params, inputs)


def backprop(
    graph: Graph,
    params: Mapping[str, Tensor],
    inputs: Mapping[str, Tensor],
    loss: str,
) -> dict[str, np.ndarray]:
    """Evaluate, backpropagate from the named scalar output, and return
    the gradient of every parameter."""
    outputs = evaluate(graph, params, inputs)
    if loss not in outputs:
        raise MissingTensorError(f"loss output {loss!r} not produced by graph")
    out = outputs[loss]
    if out.data.size != 1:
        raise NonScalarLossError(f"loss {loss!r} has shape {out.data.shape}")
    for p in params.values():
        p.grad = None
    out.backward()
    return {
        name: (p.grad if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }


@dataclass
class GradCheckReport:
    max_relative_error: float
    passed: bool
    worst_param: str = ""
    per_param: dict[str, float] = field(default_factory=dict)


def finite_diff_check(
    graph: Graph,
    params: Mapping[str, Tensor],
    inputs: Mapping[str, Tensor],
    loss: str = "loss",
    step: float = 1e-5,
    tolerance: float = 1e-5,
    tie_margin_fn: Callable[[], float] | None = None,
    tie_eps: float = 1e-3,
) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    Relative error per parameter element is |a - f| / max(1e-8, |a|, |f|).
    Requires float64 parameters and a step in (0, 1e-3]. When the graph
    contains a top-k selection, ``tie_margin_fn`` must report the minimum
    logit gap at the evaluation point; points closer than ``tie_eps`` to a
    tie are rejected so the caller can resample.
    """
    if not 0.0 < step <= 1e-3:
        raise ValueError(f"step must be in (0, 1e-3], got {step}")
    for name, p in params.items():
        if p.data.dtype != np.float64:
            raise ValueError(f"finite_diff_check needs float64 params; {name} is {p.data.dtype}")
    if tie_margin_fn is not None:
        margin = float(tie_margin_fn())
        if margin < tie_eps:
            raise TieAtCheckpointError(
                f"top-k margin {margin:.2e} below {tie_eps:.0e}; resample the check point"
            )

    with frozen_norm_stats():
        analytic = backprop(graph, params, inputs, loss)

        def loss_value() -> float:
            return float(evaluate(graph, params, inputs)[loss].data)

        per_param: dict[str, float] = {}
        worst = 0.0
        worst_name = ""
        for name, p in params.items():
            flat = p.data.reshape(-1)
            a = analytic[name].reshape(-1)
            err = 0.0
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                hi = loss_value()
                flat[i] = orig - step
                lo = loss_value()
                flat[i] = orig
                fd = (hi - lo) / (2.0 * step)
                denom = max(1e-8, abs(a[i]), abs(fd))
                err = max(err, abs(a[i] - fd) / denom)
            per_param[name] = err
            if err > worst:
                worst, worst_name = err, name

    return GradCheckReport(
        max_relative_error=worst,
        passed=worst < tolerance,
        worst_param=worst_name,
        per_param=per_param,
    )
