"""Greedy and beam-search decoding over the mixture distribution."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .. import ndgrad as nd
from .model import ConstrainedTransformer, EncoderStates
from .vocab import Vocabulary


def _pad(rows: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    n = max(len(r) for r in rows)
    ids = np.full((len(rows), n), Vocabulary.pad_id, dtype=np.int64)
    for i, r in enumerate(rows):
        ids[i, : len(r)] = r
    return ids, ids != Vocabulary.pad_id


def _tile(enc: EncoderStates, n: int) -> EncoderStates:
    return EncoderStates([nd.Tensor(np.repeat(h.data, n, axis=0)) for h in enc.layers],
                         np.repeat(enc.valid, n, axis=0), np.repeat(enc.tokens, n, axis=0),
                         None if enc.segments is None else np.repeat(enc.segments, n, axis=0))


def greedy_decode(model: ConstrainedTransformer, x_hats: Sequence[Sequence[int]], max_len: int,
                  ctx: nd.Tensor | None = None, ctx_valid=None) -> list[list[int]]:
    """Argmax rollout for a batch of modified sources; eos is not returned."""
    if max_len < 1:
        raise ValueError("max_len must be at least 1")
    model.eval()
    x, valid = _pad(x_hats)
    with nd.no_grad():
        enc = model.encoder_forward(x, valid, ctx, ctx_valid)
        prefix = np.full((len(x_hats), 1), Vocabulary.bos_id, dtype=np.int64)
        done = np.zeros(len(x_hats), dtype=bool)
        for _ in range(max_len):
            dist = model.next_token_distribution(prefix, enc, ctx, ctx_valid)
            tok = dist.argmax(-1)
            tok = np.where(done, Vocabulary.pad_id, tok)
            prefix = np.concatenate([prefix, tok[:, None]], axis=1)
            done |= tok == Vocabulary.eos_id
            if done.all():
                break
    out = []
    for row in prefix[:, 1:]:
        seq = []
        for t in row:
            if t in (Vocabulary.eos_id, Vocabulary.pad_id):
                break
            seq.append(int(t))
        out.append(seq)
    return out


def beam_search(model: ConstrainedTransformer, x_hat: Sequence[int], max_len: int, beam_size: int,
                ctx: nd.Tensor | None = None, ctx_valid=None) -> list[int]:
    """Length-normalised beam search (score = sum of log-probs / length) for one sentence."""
    if max_len < 1:
        raise ValueError("max_len must be at least 1")
    if beam_size < 1:
        raise ValueError("beam_size must be at least 1")
    model.eval()
    x, valid = _pad([x_hat])
    finished: list[tuple[float, list[int]]] = []
    with nd.no_grad():
        enc = model.encoder_forward(x, valid, ctx, ctx_valid)
        beams: list[tuple[float, list[int]]] = [(0.0, [])]
        for step in range(max_len):
            k = len(beams)
            tiled = _tile(enc, k)
            tctx = None if ctx is None else nd.Tensor(np.repeat(ctx.data, k, axis=0))
            tvalid = None if ctx_valid is None else np.repeat(ctx_valid, k, axis=0)
            prefix = np.array([[Vocabulary.bos_id] + seq for _, seq in beams], dtype=np.int64)
            logp = np.log(np.maximum(model.next_token_distribution(prefix, tiled, tctx, tvalid), 1e-300))
            cand = []
            for b, (score, seq) in enumerate(beams):
                for tok in np.argsort(-logp[b], kind="stable")[:beam_size]:
                    cand.append((score + float(logp[b, tok]), seq + [int(tok)]))
            cand.sort(key=lambda c: -c[0])
            beams = []
            for score, seq in cand:
                if seq[-1] == Vocabulary.eos_id:
                    finished.append((score / len(seq), seq[:-1]))
                else:
                    beams.append((score, seq))
                if len(beams) == beam_size:
                    break
            if len(finished) >= beam_size or not beams:
                break
    if not finished:
        finished = [(score / max(len(seq), 1), seq) for score, seq in beams]
    return max(finished, key=lambda f: f[0])[1]


def decode(model: ConstrainedTransformer, source: Sequence[int], constraints: Sequence[Sequence[int]] = (),
           max_len: int = 64, beam_size: int = 1, context=None) -> list[int]:
    """Translate one tokenised sentence, appending ``constraints`` to form X-hat.

    ``context`` is a ContextCache (or ContextEncoder) used when the model has
    fusion enabled; it always sees the plain source, never X-hat.
    """
    from ..train import build_modified_source

    if max_len < 1:
        raise ValueError("max_len must be at least 1")
    x_hat, _ = build_modified_source(list(source), [list(c) for c in constraints],
                                     model.config.max_positions)
    ctx = ctx_valid = None
    if model.config.use_fusion:
        if context is None:
            raise ValueError("a fused model needs its context encoder to decode")
        rep = context.get(source) if hasattr(context, "get") else context.represent_one(source)
        ctx, ctx_valid = nd.Tensor(rep[None]), np.ones((1, len(rep)), dtype=bool)
    if beam_size == 1:
        return greedy_decode(model, [x_hat], max_len, ctx, ctx_valid)[0]
    return beam_search(model, x_hat, max_len, beam_size, ctx, ctx_valid)
