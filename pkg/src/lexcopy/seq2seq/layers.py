"""Attention, feed-forward and positional building blocks."""

from __future__ import annotations

import numpy as np

from .. import ndgrad as nd
from ..ndgrad import Module, Tensor
from ..ndgrad.module import ones, xavier, zeros


def sinusoidal_positions(length: int, d_model: int, max_positions: int | None = None,
                         base: float = 10000.0) -> np.ndarray:
    """Interleaved sin/cos table: row p = [sin(p/w_0), cos(p/w_0), sin(p/w_1), ...]."""
    if max_positions is not None and length > max_positions:
        raise ValueError(f"sequence length {length} exceeds max_positions {max_positions}")
    pos = np.arange(length, dtype=np.float64)[:, None]
    rates = base ** (-np.arange(0, d_model, 2, dtype=np.float64) / d_model)
    table = np.zeros((length, d_model))
    table[:, 0::2] = np.sin(pos * rates)
    table[:, 1::2] = np.cos(pos * rates)[:, : d_model // 2]
    return table


class LayerNorm(Module):
    def __init__(self, name: str, dim: int):
        self.gain = ones(name + ".gain", (dim,))
        self.bias = zeros(name + ".bias", (dim,))

    def __call__(self, x: Tensor) -> Tensor:
        return nd.layer_norm(x, self.gain, self.bias)


class FeedForward(Module):
    def __init__(self, name: str, seed: int, d_model: int, ffn_dim: int):
        self.w1 = xavier(seed, name + ".w1", d_model, ffn_dim)
        self.b1 = zeros(name + ".b1", (ffn_dim,))
        self.w2 = xavier(seed, name + ".w2", ffn_dim, d_model)
        self.b2 = zeros(name + ".b2", (d_model,))

    def __call__(self, x: Tensor, drop=None) -> Tensor:
        h = nd.relu(x @ self.w1 + self.b1)
        if drop is not None:
            h = drop(h)
        return h @ self.w2 + self.b2


class MultiHeadAttention(Module):
    """Bias-free multi-head attention.

    Query inputs have width ``d_query``, keys/values width ``d_kv``; each head
    projects to ``head_dim`` and the concatenated heads are mapped back to
    ``d_out`` by ``w_o``.
    """

    def __init__(self, name: str, seed: int, d_query: int, d_kv: int, d_out: int,
                 num_heads: int, head_dim: int):
        self.num_heads = num_heads
        self.head_dim = head_dim
        inner = num_heads * head_dim
        self.w_q = xavier(seed, name + ".w_q", d_query, inner)
        self.w_k = xavier(seed, name + ".w_k", d_kv, inner)
        self.w_v = xavier(seed, name + ".w_v", d_kv, inner)
        self.w_o = xavier(seed, name + ".w_o", inner, d_out)

    def _split(self, x: Tensor) -> Tensor:
        b, n, _ = x.shape
        return x.reshape(b, n, self.num_heads, self.head_dim).transpose(0, 2, 1, 3)

    def __call__(self, q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None = None):
        """Returns (output [B, T, d_out], per-head weights [B, H, T, S]).

        ``mask`` is boolean, True where attention is allowed, broadcastable to
        [B, H, T, S].
        """
        if q.ndim != 3 or k.ndim != 3 or v.ndim != 3 or k.shape[:2] != v.shape[:2] or q.shape[0] != k.shape[0]:
            raise nd.ShapeError(f"attention inputs mismatch: q {q.shape}, k {k.shape}, v {v.shape}")
        qh = self._split(q @ self.w_q)
        kh = self._split(k @ self.w_k)
        vh = self._split(v @ self.w_v)
        scores = (qh @ kh.swapaxes(-1, -2)) * (1.0 / np.sqrt(self.head_dim))
        if mask is None:
            weights = nd.softmax(scores, axis=-1)
        else:
            mask = np.asarray(mask, dtype=bool)
            try:
                np.broadcast_shapes(mask.shape, scores.shape)
            except ValueError:
                raise nd.ShapeError(f"attention mask {mask.shape} does not fit scores {scores.shape}") from None
            weights = nd.masked_softmax(scores, mask, axis=-1)
        ctx = weights @ vh
        b, _, t, _ = ctx.shape
        out = ctx.transpose(0, 2, 1, 3).reshape(b, t, self.num_heads * self.head_dim) @ self.w_o
        return out, weights


def key_padding_mask(valid: np.ndarray) -> np.ndarray:
    """[B, S] validity -> [B, 1, 1, S] attention mask."""
    return np.asarray(valid, dtype=bool)[:, None, None, :]


def causal_mask(length: int) -> np.ndarray:
    return np.tril(np.ones((length, length), dtype=bool))
