"""A trained translator bundle: model, vocabulary and optional context encoder."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import numpy as np

from . import ndgrad as nd
from .fusion import ContextCache, ContextEncoder, ContextEncoderConfig
from .seq2seq.decoding import beam_search, greedy_decode
from .seq2seq.model import ConstrainedTransformer, ModelConfig
from .seq2seq.vocab import Vocabulary
from .terms import LexicalConstraint
from .train import build_modified_source


class Translator:
    """Translate whitespace-tokenised sentences, optionally under lexical constraints.

    Constraints are appended to the source as <sep>-delimited target
    terms; the context encoder, when present, always sees the plain source.
    Models without the copy path ignore constraints.
    """

    def __init__(self, model: ConstrainedTransformer, vocab: Vocabulary,
                 context_encoder: ContextEncoder | None = None, beam_size: int = 1,
                 max_extra_len: int = 10, batch_size: int = 64):
        if model.config.use_fusion and context_encoder is None:
            raise ValueError("a fused model needs its context encoder")
        self.model = model
        self.vocab = vocab
        self.context_encoder = context_encoder
        self.context = ContextCache(context_encoder) if context_encoder is not None else None
        self.beam_size = beam_size
        self.max_extra_len = max_extra_len
        self.batch_size = batch_size

    def _x_hat(self, src_ids: list[int], constraints: Sequence[LexicalConstraint]) -> list[int]:
        if not self.model.config.use_pointer:
            return src_ids
        terms = [self.vocab.encode(c.target_term) for c in constraints]
        return build_modified_source(src_ids, terms, self.model.config.max_positions)[0]

    def _max_len(self, n: int) -> int:
        return max(1, min(2 * n + self.max_extra_len, self.model.config.max_positions - 1))

    def translate(self, source: Sequence[str], constraints: Sequence[LexicalConstraint] = ()) -> list[str]:
        return self.translate_batch([source], [constraints])[0]

    def translate_batch(self, sources: Sequence[Sequence[str]],
                        constraint_lists: Sequence[Sequence[LexicalConstraint]] | None = None) -> list[list[str]]:
        if constraint_lists is None:
            constraint_lists = [[] for _ in sources]
        if len(constraint_lists) != len(sources):
            raise ValueError("one constraint list per source sentence is required")
        src_ids = [self.vocab.encode(list(s)) for s in sources]
        x_hats = [self._x_hat(s, c) for s, c in zip(src_ids, constraint_lists)]
        out: list[list[int]] = [None] * len(sources)
        if self.beam_size > 1:
            for i, (s, x) in enumerate(zip(src_ids, x_hats)):
                ctx, cv = self._ctx([s])
                out[i] = beam_search(self.model, x, self._max_len(len(s)), self.beam_size, ctx, cv)
        else:
            # Group by length so padding stays small.
            order = sorted(range(len(sources)), key=lambda i: len(x_hats[i]))
            for start in range(0, len(order), self.batch_size):
                idx = order[start:start + self.batch_size]
                ctx, cv = self._ctx([src_ids[i] for i in idx])
                max_len = self._max_len(max(len(src_ids[i]) for i in idx))
                for i, hyp in zip(idx, greedy_decode(self.model, [x_hats[i] for i in idx], max_len, ctx, cv)):
                    out[i] = hyp
        return [self.vocab.decode(h) for h in out]

    def _ctx(self, src_ids):
        if not self.model.config.use_fusion:
            return None, None
        return self.context.batch(src_ids)

    # --- persistence ---------------------------------------------------------------------------
    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        self.model.save(d / "model.ckpt")
        self.vocab.save(d / "vocab.txt")
        meta = {"model": self.model.config.to_dict(), "vocab_size": len(self.vocab)}
        if self.context_encoder is not None:
            nd.save_checkpoint(d / "context.ckpt", self.context_encoder.state_dict())
            meta["context"] = vars(self.context_encoder.config)
        (d / "translator.json").write_text(json.dumps(meta, indent=2), encoding="utf-8")

    @classmethod
    def load(cls, directory, beam_size: int = 1) -> "Translator":
        d = Path(directory)
        meta = json.loads((d / "translator.json").read_text(encoding="utf-8"))
        vocab = Vocabulary.load(d / "vocab.txt")
        model = ConstrainedTransformer(meta["vocab_size"], ModelConfig.from_dict(meta["model"]))
        model.load(d / "model.ckpt")
        enc = None
        if "context" in meta:
            enc = ContextEncoder(meta["vocab_size"], ContextEncoderConfig(**meta["context"]))
            enc.load_state_dict(nd.load_checkpoint(d / "context.ckpt"))
            enc.eval()
            enc.freeze()
            enc.frozen = True
        return cls(model, vocab, enc, beam_size)
