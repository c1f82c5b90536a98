"""AdamW with global gradient-norm clipping and an inverse-sqrt schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


class MissingGradientError(RuntimeError):
    pass


@dataclass
class OptimizerState:
    learning_rate: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.98
    weight_decay: float = 0.0
    epsilon: float = 1e-8
    clip_norm: float | None = 1.0
    step_count: int = 0
    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)


def global_grad_norm(params: list[Tensor]) -> float:
    return math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params))


def adamw_step(params: list[Tensor], state: OptimizerState, lr: float | None = None) -> float:
    """One AdamW update in place. Returns the pre-clipping gradient norm."""
    for i, p in enumerate(params):
        if p.grad is None:
            raise MissingGradientError(f"parameter {p.name or i} has no gradient")
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p.data) for p in params]
        state.second_moment = [np.zeros_like(p.data) for p in params]
    lr = state.learning_rate if lr is None else lr

    norm = global_grad_norm(params)
    scale = 1.0
    if state.clip_norm is not None and norm > state.clip_norm:
        scale = state.clip_norm / norm

    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for p, m, v in zip(params, state.first_moment, state.second_moment):
        g = p.grad * scale if scale != 1.0 else p.grad
        if state.weight_decay:
            p.data *= 1.0 - lr * state.weight_decay
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    return norm


def inverse_sqrt_lr(step: int, peak_lr: float, warmup: int, warmup_init_lr: float = 1e-7) -> float:
    """Linear warmup from ``warmup_init_lr`` to ``peak_lr``, then peak * sqrt(warmup / step)."""
    if warmup > 0 and step < warmup:
        return warmup_init_lr + step * (peak_lr - warmup_init_lr) / warmup
    return peak_lr * math.sqrt(max(warmup, 1) / max(step, 1))
