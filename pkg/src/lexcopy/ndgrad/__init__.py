"""Minimal float64 autodiff: tensors, ops, AdamW, checkpoints, gradient checks."""

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import finite_diff_check
from .module import Module
from .optim import MissingGradientError, OptimizerState, adamw_step, global_grad_norm, inverse_sqrt_lr
from .tensor import (
    ShapeError,
    Tensor,
    add,
    as_tensor,
    backward,
    concat,
    div,
    dropout,
    embedding,
    exp,
    gather_last,
    getitem,
    graph_nodes,
    is_grad_enabled,
    layer_norm,
    log,
    log_softmax,
    masked_softmax,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    op_count,
    power,
    relu,
    reshape,
    sigmoid,
    softmax,
    sub,
    tanh,
    transpose,
    tsum,
    where,
)
