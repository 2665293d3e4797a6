from .checkpoint import load_checkpoint, save_checkpoint
from .errors import (
    ComputeError,
    MissingTensorError,
    NonDifferentiableError,
    NonScalarLossError,
    ShapeMismatchError,
    TieAtCheckpointError,
)
from .graph import Graph, GradCheckReport, backprop, evaluate, finite_diff_check
from .modules import BatchNorm2d, Conv2d, ConvBnSiLU, Linear, Module, frozen_norm_stats, kaiming_uniform
from .tensor import (
    Tensor,
    add,
    as_tensor,
    bce_with_logits,
    concat,
    conv2d,
    default_dtype,
    exp,
    global_avg_pool,
    linear,
    log,
    matmul,
    maximum,
    minimum,
    mul,
    no_grad,
    parameter,
    pow_scalar,
    reduce_mean,
    reduce_sum,
    reshape,
    scale,
    sigmoid,
    silu,
    softmax,
    softmax_cross_entropy,
    take,
    top_k_indices,
    transpose,
    upsample_nearest2x,
    use_dtype,
)
