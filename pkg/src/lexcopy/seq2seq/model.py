"""Constraint-aware transformer encoder-decoder with context fusion and a copy gate."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .. import ndgrad as nd
from .. import fusion  # the fused layers live there; resolved at construction time
from ..ndgrad import Module, Tensor
from ..ndgrad.module import normal, xavier, zeros
from ..pointer import MixtureOutput, context_vector, copy_distribution, copy_score, mixture_output
from .layers import causal_mask, key_padding_mask, sinusoidal_positions
from .vocab import RESERVED, Vocabulary

COPY_REGIONS = ("all", "constraints_only")


@dataclass
class ModelConfig:
    num_layers: int = 2
    d_model: int = 64
    ffn_dim: int = 256
    num_heads: int = 4
    dropout: float = 0.1
    max_positions: int = 256
    use_segment_embeddings: bool = True
    use_fusion: bool = True
    d_plm: int = 96
    use_pointer: bool = True
    copy_region: str = "all"
    seed: int = 0

    def __post_init__(self):
        if min(self.num_layers, self.d_model, self.ffn_dim, self.num_heads, self.max_positions) <= 0:
            raise ValueError("model dimensions must be positive")
        if self.d_model % self.num_heads:
            raise ValueError(f"d_model {self.d_model} is not divisible by num_heads {self.num_heads}")
        if self.copy_region not in COPY_REGIONS:
            raise ValueError(f"copy_region must be one of {COPY_REGIONS}")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.num_heads

    @classmethod
    def full_scale(cls, **overrides) -> "ModelConfig":
        base = dict(num_layers=6, d_model=768, ffn_dim=3072, num_heads=12, dropout=0.3,
                    max_positions=1024, d_plm=1024)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class EncoderStates:
    layers: list[Tensor]          # H^0 .. H^L, each [B, S, d]
    valid: np.ndarray             # [B, S] bool
    tokens: np.ndarray            # [B, S]
    segments: np.ndarray = field(default=None)

    @property
    def last(self) -> Tensor:
        return self.layers[-1]


@dataclass
class DecoderOutput:
    states: Tensor                # s^L, [B, T, d]
    alpha: Tensor                 # head-averaged last-layer cross attention, [B, T, S]
    head_weights: Tensor          # [B, H, T, S]


def segment_ids(x_hat: np.ndarray, sep_id: int = Vocabulary.sep_id) -> np.ndarray:
    """0 before the first <sep>, 1 from the first <sep> onwards (per row)."""
    x_hat = np.asarray(x_hat)
    return (np.cumsum(x_hat == sep_id, axis=-1) > 0).astype(np.int64)


class ConstrainedTransformer(Module):
    """Encoder-decoder over a joint vocabulary with tied embeddings.

    The same embedding table feeds the encoder, the decoder and (transposed)
    the output softmax that yields p_word.
    """

    def __init__(self, vocab_size: int, config: ModelConfig = ModelConfig()):
        self.config = config
        self.vocab_size = vocab_size
        c = config
        d_plm = c.d_plm if c.use_fusion else None
        self.embed = normal(c.seed, "embed", (vocab_size, c.d_model), c.d_model ** -0.5)
        self.segment_embed = (normal(c.seed, "segment_embed", (2, c.d_model), c.d_model ** -0.5)
                              if c.use_segment_embeddings else None)
        self.encoder_layers = [fusion.FusedEncoderLayer(f"encoder.{i}", c.seed, c.d_model, c.ffn_dim, c.num_heads, d_plm)
                               for i in range(c.num_layers)]
        self.decoder_layers = [fusion.FusedDecoderLayer(f"decoder.{i}", c.seed, c.d_model, c.ffn_dim, c.num_heads, d_plm)
                               for i in range(c.num_layers)]
        if c.use_pointer:
            self.w_g = xavier(c.seed, "pointer.w_g", 2 * c.d_model, 1)
            self.b_g = zeros("pointer.b_g", (1,))
        else:
            self.w_g = self.b_g = None
        self.rng = np.random.default_rng(c.seed + 104729)
        self.last_segment_lookup: np.ndarray | None = None

    # --- helpers -----------------------------------------------------------------
    def _drop(self, x: Tensor) -> Tensor:
        return nd.dropout(x, self.config.dropout, self.rng, self.training)

    def _check_ids(self, ids: np.ndarray) -> None:
        if ids.size and (ids.min() < 0 or ids.max() >= self.vocab_size):
            bad = ids[(ids < 0) | (ids >= self.vocab_size)][0]
            raise ValueError(f"token id {bad} is outside the vocabulary of size {self.vocab_size}")
        if ids.shape[-1] > self.config.max_positions:
            raise ValueError(f"sequence length {ids.shape[-1]} exceeds max_positions {self.config.max_positions}")

    def embed_tokens(self, ids: np.ndarray, segments: np.ndarray | None = None,
                     use_positions: bool = True) -> Tensor:
        d = self.config.d_model
        x = nd.embedding(self.embed, ids) * np.sqrt(d)
        if use_positions:
            x = x + sinusoidal_positions(ids.shape[-1], d, self.config.max_positions)
        if self.segment_embed is not None and segments is not None:
            self.last_segment_lookup = np.asarray(segments)
            x = x + nd.embedding(self.segment_embed, segments)
        return self._drop(x)

    # --- encoder / decoder -------------------------------------------------------------
    def encoder_forward(self, tokens, valid=None, ctx: Tensor | None = None, ctx_valid=None,
                        segments=None, use_positions: bool = True) -> EncoderStates:
        tokens = np.atleast_2d(np.asarray(tokens, dtype=np.int64))
        self._check_ids(tokens)
        valid = tokens != Vocabulary.pad_id if valid is None else np.atleast_2d(np.asarray(valid, dtype=bool))
        if segments is None and self.segment_embed is not None:
            segments = segment_ids(tokens)
        ctx_mask = None if ctx_valid is None else key_padding_mask(ctx_valid)
        h = self.embed_tokens(tokens, segments, use_positions)
        mask = key_padding_mask(valid)
        layers = [h]
        for layer in self.encoder_layers:
            h = layer(h, mask, ctx, ctx_mask, drop=self._drop)
            layers.append(h)
        return EncoderStates(layers, valid, tokens, segments)

    def decoder_forward(self, prefix, enc: EncoderStates, ctx: Tensor | None = None,
                        ctx_valid=None) -> DecoderOutput:
        prefix = np.atleast_2d(np.asarray(prefix, dtype=np.int64))
        if prefix.shape[-1] == 0:
            raise ValueError("decoder prefix is empty")
        if enc is None:
            raise ValueError("decoder needs encoder states")
        self._check_ids(prefix)
        t = prefix.shape[-1]
        prefix_valid = prefix != Vocabulary.pad_id
        self_mask = causal_mask(t)[None, None] & key_padding_mask(prefix_valid)
        # A query row must see itself even if it sits on padding.
        self_mask = self_mask | np.eye(t, dtype=bool)[None, None]
        enc_mask = key_padding_mask(enc.valid)
        ctx_mask = None if ctx_valid is None else key_padding_mask(ctx_valid)
        s = self.embed_tokens(prefix)
        weights = None
        for layer in self.decoder_layers:
            s, weights = layer(s, self_mask, enc.last, enc_mask, ctx, ctx_mask, drop=self._drop)
        alpha = weights.mean(axis=1)
        return DecoderOutput(s, alpha, weights)

    # --- output distributions ----------------------------------------------------------
    def copyable_positions(self, enc: EncoderStates) -> np.ndarray:
        tok = enc.tokens
        ok = enc.valid & (tok >= len(RESERVED))
        if self.config.copy_region == "constraints_only":
            ok = ok & (segment_ids(tok) == 1)
        return ok

    def output(self, dec: DecoderOutput, enc: EncoderStates) -> MixtureOutput:
        logits = dec.states @ self.embed.transpose()
        p_word = nd.softmax(logits, axis=-1)
        if not self.config.use_pointer:
            zero = nd.Tensor(np.zeros(p_word.shape[:-1]))
            return MixtureOutput(p_word, p_word, zero, p_word)
        c = context_vector(dec.alpha, enc.last)
        g = nd.sigmoid(copy_score(c, dec.states, self.w_g, self.b_g))
        p_copy = copy_distribution(dec.alpha, enc.tokens, self.copyable_positions(enc), self.vocab_size,
                                   fallback=p_word)
        p_final = mixture_output(p_word, p_copy, g, validate=False)
        return MixtureOutput(p_word, p_copy, g, p_final)

    def forward(self, x_hat, y_in, ctx: Tensor | None = None, ctx_valid=None,
                x_valid=None) -> tuple[MixtureOutput, DecoderOutput, EncoderStates]:
        enc = self.encoder_forward(x_hat, x_valid, ctx, ctx_valid)
        dec = self.decoder_forward(y_in, enc, ctx, ctx_valid)
        return self.output(dec, enc), dec, enc

    def save(self, path) -> None:
        nd.save_checkpoint(path, self.state_dict())

    def load(self, path) -> None:
        self.load_state_dict(nd.load_checkpoint(path))

    def next_token_distribution(self, prefix: np.ndarray, enc: EncoderStates, ctx: Tensor | None = None,
                                ctx_valid=None) -> np.ndarray:
        """p_final at the last prefix position, [B, V]. Call under ``no_grad``."""
        dec = self.decoder_forward(prefix, enc, ctx, ctx_valid)
        last = DecoderOutput(dec.states[:, -1:], dec.alpha[:, -1:], dec.head_weights[:, :, -1:])
        return self.output(last, enc).p_final.data[:, 0]
