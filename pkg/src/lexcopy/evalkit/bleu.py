"""Corpus BLEU-4 with exponential smoothing of zero n-gram matches."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

MAX_ORDER = 4


@dataclass
class BleuStats:
    correct: list[int]
    total: list[int]
    sys_len: int
    ref_len: int


def _tokens(text) -> list[str]:
    return text.split() if isinstance(text, str) else list(text)


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu_stats(hypotheses: Sequence, references: Sequence) -> BleuStats:
    if len(hypotheses) != len(references):
        raise ValueError(f"{len(hypotheses)} hypotheses but {len(references)} references")
    correct = [0] * MAX_ORDER
    total = [0] * MAX_ORDER
    sys_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        h, r = _tokens(hyp), _tokens(ref)
        sys_len += len(h)
        ref_len += len(r)
        for n in range(1, MAX_ORDER + 1):
            hc, rc = _ngrams(h, n), _ngrams(r, n)
            correct[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
            total[n - 1] += max(len(h) - n + 1, 0)
    return BleuStats(correct, total, sys_len, ref_len)


def bleu_from_stats(stats: BleuStats) -> float:
    """Score in [0, 100].

    No matching n-gram of any order gives 0. An order with no hypothesis
    n-grams gets precision 0; an order with n-grams but no matches gets
    1 / (2^k * total), k counting such orders.
    """
    if not any(stats.correct):
        return 0.0
    log_precisions = []
    smooth = 1.0
    for n in range(MAX_ORDER):
        c, t = stats.correct[n], stats.total[n]
        if t == 0:
            return 0.0
        if c == 0:
            smooth *= 2.0
            log_precisions.append(-math.log(smooth * t))
        else:
            log_precisions.append(math.log(c / t))
    if stats.sys_len == 0:
        return 0.0
    log_bp = min(0.0, 1.0 - stats.ref_len / stats.sys_len)
    if all(c == t for c, t in zip(stats.correct, stats.total)) and log_bp == 0.0:
        return 100.0
    return 100.0 * math.exp(log_bp + sum(log_precisions) / MAX_ORDER)


def corpus_bleu(hypotheses: Sequence, references: Sequence) -> float:
    """Whitespace-tokenised corpus BLEU against a single reference per sentence."""
    return bleu_from_stats(bleu_stats(hypotheses, references))
