"""Frozen context encoder and the layers that fuse its output into the NMT model.

The context encoder stands in for a pretrained language model: a small
transformer encoder trained with a masked-token objective on source text and
then frozen. Its last-layer output ``B`` over the plain source sentence is
attended to by a parallel attention branch in every encoder and decoder layer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ndgrad as nd
from .ndgrad import Module, Tensor
from .ndgrad.module import normal, zeros
from .seq2seq.layers import (FeedForward, LayerNorm, MultiHeadAttention, key_padding_mask,
                             sinusoidal_positions)
from .seq2seq.vocab import RESERVED, Vocabulary


def _identity(x):
    return x


class FusedEncoderLayer(Module):
    """Encoder layer with an optional attention branch over ``B``.

    With the branch: h~ = (MHA(h, H, H) + MHA_B(h, B, B)) / 2 + h.
    Without it:      h~ = MHA(h, H, H) + h.
    Both continue with h = LN(FFN(LN(h~)) + h~).
    """

    def __init__(self, name: str, seed: int, d_model: int, ffn_dim: int, num_heads: int,
                 d_plm: int | None = None):
        head_dim = d_model // num_heads
        self.self_attn = MultiHeadAttention(name + ".self_attn", seed, d_model, d_model, d_model,
                                            num_heads, head_dim)
        self.plm_attn = (MultiHeadAttention(name + ".plm_attn", seed, d_model, d_plm, d_model,
                                            num_heads, head_dim) if d_plm else None)
        self.ffn = FeedForward(name + ".ffn", seed, d_model, ffn_dim)
        self.ln_ffn = LayerNorm(name + ".ln_ffn", d_model)
        self.ln_out = LayerNorm(name + ".ln_out", d_model)

    def __call__(self, h: Tensor, mask, ctx: Tensor | None = None, ctx_mask=None, drop=None) -> Tensor:
        drop = drop or _identity
        attn, _ = self.self_attn(h, h, h, mask)
        attn = drop(attn)
        if self.plm_attn is not None:
            if ctx is None:
                raise ValueError("fused layer needs the context representation B")
            if ctx.shape[1] == 0:
                raise ValueError("context representation B has length zero")
            branch, _ = self.plm_attn(h, ctx, ctx, ctx_mask)
            h_tilde = (attn + drop(branch)) * 0.5 + h
        else:
            h_tilde = attn + h
        out = drop(self.ffn(self.ln_ffn(h_tilde), drop))
        return self.ln_out(out + h_tilde)


class FusedDecoderLayer(Module):
    """Decoder layer: s^ = LN(MHA(s, S_1:t, S_1:t)) + s, then the averaged
    cross branches over H^L and B, then LN(FFN(LN(s~)) + s~).

    Returns the layer output and the per-head cross-attention weights to H^L.
    """

    def __init__(self, name: str, seed: int, d_model: int, ffn_dim: int, num_heads: int,
                 d_plm: int | None = None):
        head_dim = d_model // num_heads
        self.self_attn = MultiHeadAttention(name + ".self_attn", seed, d_model, d_model, d_model,
                                            num_heads, head_dim)
        self.ln_self = LayerNorm(name + ".ln_self", d_model)
        self.cross_attn = MultiHeadAttention(name + ".cross_attn", seed, d_model, d_model, d_model,
                                             num_heads, head_dim)
        self.plm_attn = (MultiHeadAttention(name + ".plm_attn", seed, d_model, d_plm, d_model,
                                            num_heads, head_dim) if d_plm else None)
        self.ffn = FeedForward(name + ".ffn", seed, d_model, ffn_dim)
        self.ln_ffn = LayerNorm(name + ".ln_ffn", d_model)
        self.ln_out = LayerNorm(name + ".ln_out", d_model)

    def __call__(self, s: Tensor, self_mask, enc: Tensor | None, enc_mask, ctx: Tensor | None = None,
                 ctx_mask=None, drop=None):
        if enc is None:
            raise ValueError("decoder layer needs encoder states")
        drop = drop or _identity
        attn, _ = self.self_attn(s, s, s, self_mask)
        s_hat = self.ln_self(drop(attn)) + s
        cross, weights = self.cross_attn(s_hat, enc, enc, enc_mask)
        cross = drop(cross)
        if self.plm_attn is not None:
            if ctx is None:
                raise ValueError("fused layer needs the context representation B")
            if ctx.shape[1] == 0:
                raise ValueError("context representation B has length zero")
            branch, _ = self.plm_attn(s_hat, ctx, ctx, ctx_mask)
            s_tilde = (cross + drop(branch)) * 0.5 + s_hat
        else:
            s_tilde = cross + s_hat
        out = drop(self.ffn(self.ln_ffn(s_tilde), drop))
        return self.ln_out(out + s_tilde), weights


@dataclass
class ContextEncoderConfig:
    num_layers: int = 2
    d_model: int = 96
    ffn_dim: int = 384
    num_heads: int = 4
    max_positions: int = 256
    dropout: float = 0.1
    mask_prob: float = 0.15
    random_prob: float = 0.1   # share of chosen positions given a random token
    keep_prob: float = 0.1     # share of chosen positions left unchanged
    epochs: int = 5
    lr: float = 1e-3
    warmup: int = 100
    batch_sentences: int = 32
    seed: int = 0


class ContextEncoder(Module):
    """Masked-token transformer encoder. Parameter names carry the ``plm.`` prefix."""

    prefix = "plm."

    def __init__(self, vocab_size: int, config: ContextEncoderConfig = ContextEncoderConfig()):
        self.config = config
        c = config
        self.embed = normal(c.seed, "plm.embed", (vocab_size, c.d_model), c.d_model ** -0.5)
        self.out_bias = zeros("plm.out_bias", (vocab_size,))
        self.layers = [FusedEncoderLayer(f"plm.layers.{i}", c.seed, c.d_model, c.ffn_dim, c.num_heads)
                       for i in range(c.num_layers)]
        self.rng = np.random.default_rng(c.seed + 7919)
        self.frozen = False

    def named_parameters(self, prefix: str = ""):
        yield from super().named_parameters(prefix or self.prefix)

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def dim(self) -> int:
        return self.config.d_model

    def _drop(self, x):
        return nd.dropout(x, self.config.dropout, self.rng, self.training)

    def layer_states(self, ids: np.ndarray, valid: np.ndarray) -> list[Tensor]:
        """Outputs of layers 1..depth for a padded batch [B, S]."""
        ids = np.asarray(ids)
        if ids.shape[1] > self.config.max_positions:
            raise ValueError(f"sequence length {ids.shape[1]} exceeds max_positions {self.config.max_positions}")
        d = self.config.d_model
        x = nd.embedding(self.embed, ids) * np.sqrt(d) + sinusoidal_positions(ids.shape[1], d)
        x = self._drop(x)
        mask = key_padding_mask(valid)
        states = []
        for layer in self.layers:
            x = layer(x, mask, drop=self._drop)
            states.append(x)
        return states

    def mlm_logits(self, last: Tensor) -> Tensor:
        return last @ self.embed.transpose() + self.out_bias

    def represent_one(self, ids) -> np.ndarray:
        """B for one sentence: last-layer states [len, d_plm], gradients off.

        Sentences longer than ``max_positions`` are truncated.
        """
        ids = np.asarray(list(ids)[: self.config.max_positions], dtype=np.int64)[None, :]
        was = self.training
        self.eval()
        with nd.no_grad():
            out = self.layer_states(ids, np.ones_like(ids, dtype=bool))[-1].data[0]
        self.train(was)
        return out.copy()

    def all_layers_one(self, ids) -> list[np.ndarray]:
        ids = np.asarray(list(ids)[: self.config.max_positions], dtype=np.int64)[None, :]
        was = self.training
        self.eval()
        with nd.no_grad():
            states = [s.data[0].copy() for s in self.layer_states(ids, np.ones_like(ids, dtype=bool))]
        self.train(was)
        return states


class ContextCache:
    """Memoises B per source sentence; valid because the encoder is frozen."""

    def __init__(self, encoder: ContextEncoder):
        self.encoder = encoder
        self._cache: dict[tuple[int, ...], np.ndarray] = {}

    def get(self, ids) -> np.ndarray:
        key = tuple(int(i) for i in ids)
        if key not in self._cache:
            self._cache[key] = self.encoder.represent_one(key)
        return self._cache[key]

    def batch(self, sentences) -> tuple[Tensor, np.ndarray]:
        reps = [self.get(s) for s in sentences]
        n = max(len(r) for r in reps)
        d = self.encoder.dim
        out = np.zeros((len(reps), n, d))
        valid = np.zeros((len(reps), n), dtype=bool)
        for i, r in enumerate(reps):
            out[i, : len(r)] = r
            valid[i, : len(r)] = True
        return Tensor(out), valid


def _mask_batch(sents: list[list[int]], vocab_size: int, mask_prob: float, rng: np.random.Generator,
                mask_id: int, random_prob: float = 0.0, keep_prob: float = 0.0):
    """Choose ~mask_prob of the positions as prediction targets. Chosen
    positions become ``mask_id``, except a ``random_prob`` share that gets a
    random ordinary token and a ``keep_prob`` share left as is."""
    n = max(len(s) for s in sents)
    ids = np.zeros((len(sents), n), dtype=np.int64)
    valid = np.zeros((len(sents), n), dtype=bool)
    chosen = np.zeros((len(sents), n), dtype=bool)
    for i, s in enumerate(sents):
        ids[i, : len(s)] = s
        valid[i, : len(s)] = True
        pick = rng.random(len(s)) < mask_prob
        if not pick.any():
            pick[rng.integers(len(s))] = True
        chosen[i, : len(s)] = pick
    roll = rng.random(ids.shape)
    inputs = np.where(chosen & (roll >= random_prob + keep_prob), mask_id, ids)
    swap = chosen & (roll < random_prob)
    inputs[swap] = rng.integers(len(RESERVED), vocab_size, size=int(swap.sum()))
    return inputs, valid, chosen, ids


def mlm_loss(encoder: ContextEncoder, inputs, valid, chosen, targets) -> Tensor:
    last = encoder.layer_states(inputs, valid)[-1]
    logp = nd.log_softmax(encoder.mlm_logits(last), axis=-1)
    picked = nd.gather_last(logp, targets)
    return -(picked * chosen.astype(np.float64)).sum() * (1.0 / max(int(chosen.sum()), 1))


def pretrain_context_encoder(corpus: list[list[int]], vocab_size: int,
                             config: ContextEncoderConfig = ContextEncoderConfig(),
                             log=None) -> ContextEncoder:
    """Train a masked-token encoder on tokenised source sentences, then freeze it.

    Masked positions are replaced by the ``<unk>`` id and predicted with a
    cross-entropy loss.
    """
    corpus = [list(s)[: config.max_positions] for s in corpus if len(s)]
    if not corpus:
        raise ValueError("cannot pretrain the context encoder on an empty corpus")
    enc = ContextEncoder(vocab_size, config)
    enc.train()
    params = enc.parameters()
    state = nd.OptimizerState(learning_rate=config.lr, clip_norm=1.0)
    rng = np.random.default_rng(config.seed)
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(corpus))
        total = 0.0
        for start in range(0, len(order), config.batch_sentences):
            sents = [corpus[i] for i in order[start:start + config.batch_sentences]]
            batch = _mask_batch(sents, vocab_size, config.mask_prob, rng, Vocabulary.unk_id,
                                config.random_prob, config.keep_prob)
            enc.zero_grad()
            loss = mlm_loss(enc, *batch)
            nd.backward(loss)
            step += 1
            nd.adamw_step(params, state, nd.inverse_sqrt_lr(step, config.lr, config.warmup))
            total += loss.item() * len(sents)
        if log:
            log(f"context encoder epoch {epoch + 1}: mlm loss {total / len(corpus):.4f}")
    enc.eval()
    enc.freeze()
    enc.frozen = True
    return enc


def masked_token_accuracy(encoder: ContextEncoder, corpus: list[list[int]], seed: int = 0,
                          mask_prob: float = 0.15) -> float:
    rng = np.random.default_rng(seed)
    hits = total = 0
    encoder.eval()
    with nd.no_grad():
        for start in range(0, len(corpus), 64):
            sents = [list(s) for s in corpus[start:start + 64] if len(s)]
            if not sents:
                continue
            inputs, valid, chosen, targets = _mask_batch(sents, len(encoder.embed.data), mask_prob, rng,
                                                         Vocabulary.unk_id)
            last = encoder.layer_states(inputs, valid)[-1]
            pred = encoder.mlm_logits(last).data.argmax(-1)
            hits += int(((pred == targets) & chosen).sum())
            total += int(chosen.sum())
    return hits / max(total, 1)
