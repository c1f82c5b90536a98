"""Copying score, copy distribution and the word/copy mixture."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ndgrad as nd
from .ndgrad import Tensor


@dataclass
class MixtureOutput:
    p_word: Tensor   # [..., V]
    p_copy: Tensor   # [..., V]
    g_copy: Tensor   # [...]
    p_final: Tensor  # [..., V]


def context_vector(alpha: Tensor, enc_last: Tensor) -> Tensor:
    """c_t = sum_i alpha[t, i] * h_i for alpha [B, T, S] and h [B, S, d]."""
    return nd.matmul(alpha, enc_last)


def copy_score(c: Tensor, s: Tensor, w_g: Tensor, b_g: Tensor) -> Tensor:
    """g = sigmoid([c; s] W_g + b_g), returned without the trailing unit axis."""
    c, s = nd.as_tensor(c), nd.as_tensor(s)
    if c.shape[-1] + s.shape[-1] != w_g.shape[0]:
        raise nd.ShapeError(f"[c; s] has width {c.shape[-1] + s.shape[-1]} but W_g expects {w_g.shape[0]}")
    logit = nd.concat([c, s], axis=-1) @ w_g + b_g
    return logit.reshape(logit.shape[:-1])


def copy_distribution(alpha: Tensor, x_hat: np.ndarray, copyable: np.ndarray, vocab_size: int,
                      fallback: Tensor | None = None) -> Tensor:
    """p_copy(v) = sum of renormalised attention on positions holding token v.

    ``alpha`` is [B, T, S] (or [T, S] / [S]); ``copyable`` marks the positions of
    ``x_hat`` [B, S] that may be copied. Rows whose copyable mass is zero raise,
    unless ``fallback`` (same shape as the output) is given to fill them.
    """
    alpha = nd.as_tensor(alpha)
    x_hat = np.asarray(x_hat)
    copyable = np.asarray(copyable, dtype=bool)
    squeeze = 0
    while alpha.ndim < 3:
        alpha = alpha.reshape((1,) + alpha.shape)
        squeeze += 1
    if x_hat.ndim == 1:
        x_hat, copyable = x_hat[None], copyable[None]
    if alpha.shape[-1] != x_hat.shape[-1]:
        raise nd.ShapeError(f"attention over {alpha.shape[-1]} positions but x_hat has {x_hat.shape[-1]}")
    keep = copyable[:, None, :].astype(np.float64)
    masked = alpha * keep
    total = masked.sum(axis=-1, keepdims=True)
    empty = total.data <= 0.0
    if empty.any() and fallback is None:
        raise ValueError("copy distribution undefined: every position is masked")
    safe = nd.where(empty, 1.0, total)
    onehot = np.zeros(x_hat.shape + (vocab_size,))
    np.put_along_axis(onehot, x_hat[..., None], 1.0, axis=-1)
    onehot *= copyable[..., None]
    p = (masked / safe) @ onehot
    if empty.any():
        p = nd.where(np.broadcast_to(empty, p.shape), fallback, p)
    for _ in range(squeeze):
        p = p.reshape(p.shape[1:])
    return p


def _check_distribution(p: np.ndarray, what: str, tol: float = 1e-6) -> None:
    if (p < -tol).any() or not np.allclose(p.sum(axis=-1), 1.0, atol=tol, rtol=0):
        raise ValueError(f"{what} is not a normalised distribution")


def mixture_output(p_word: Tensor, p_copy: Tensor, g: Tensor, validate: bool = True) -> Tensor:
    """(1 - g) * p_word + g * p_copy, with g broadcast over the vocabulary axis."""
    p_word, p_copy, g = nd.as_tensor(p_word), nd.as_tensor(p_copy), nd.as_tensor(g)
    if validate:
        _check_distribution(p_word.data, "p_word")
        _check_distribution(p_copy.data, "p_copy")
        if (g.data < 0).any() or (g.data > 1).any():
            raise ValueError("copying score must lie in [0, 1]")
    gv = g.reshape(g.shape + (1,))
    return (1.0 - gv) * p_word + gv * p_copy
