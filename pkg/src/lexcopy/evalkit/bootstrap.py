"""Paired bootstrap resampling for comparing two systems."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .bleu import BleuStats, MAX_ORDER, bleu_from_stats, bleu_stats


def _sentence_stats(hyps: Sequence, refs: Sequence) -> np.ndarray:
    """[N, 2*MAX_ORDER + 2] sufficient statistics, one row per sentence."""
    rows = []
    for h, r in zip(hyps, refs):
        s = bleu_stats([h], [r])
        rows.append(s.correct + s.total + [s.sys_len, s.ref_len])
    return np.asarray(rows, dtype=np.int64)


def _bleu_of(row: np.ndarray) -> float:
    k = MAX_ORDER
    return bleu_from_stats(BleuStats(list(row[:k]), list(row[k:2 * k]), int(row[-2]), int(row[-1])))


def paired_bootstrap(hyps_a: Sequence, hyps_b: Sequence, refs: Sequence,
                     metric: str | Callable = "bleu", n_resamples: int = 1000, seed: int = 0) -> float:
    """One-sided p-value for "B is at least as good as A".

    Each resample draws sentence indices with replacement and scores both
    systems on it. p is the fraction of resamples where B beats A, with ties
    counted as half, so identical systems give exactly 0.5.
    ``metric`` is "bleu" or a callable ``metric(hyps, refs) -> float``.
    """
    n = len(refs)
    if n == 0 or len(hyps_a) == 0 or len(hyps_b) == 0:
        raise ValueError("paired bootstrap needs nonempty inputs")
    if not len(hyps_a) == len(hyps_b) == n:
        raise ValueError("hypotheses and references must be aligned")
    if n_resamples < 100:
        raise ValueError("n_resamples must be at least 100")
    rng = np.random.default_rng(seed)
    draws = rng.integers(0, n, size=(n_resamples, n))
    if metric == "bleu":
        sa, sb = _sentence_stats(hyps_a, refs), _sentence_stats(hyps_b, refs)
        score_a = [_bleu_of(sa[idx].sum(0)) for idx in draws]
        score_b = [_bleu_of(sb[idx].sum(0)) for idx in draws]
    elif callable(metric):
        score_a, score_b = [], []
        for idx in draws:
            r = [refs[i] for i in idx]
            score_a.append(metric([hyps_a[i] for i in idx], r))
            score_b.append(metric([hyps_b[i] for i in idx], r))
    else:
        raise ValueError(f"unknown metric {metric!r}")
    a, b = np.asarray(score_a), np.asarray(score_b)
    return float(((b > a).sum() + 0.5 * (b == a).sum()) / n_resamples)
