"""Terminology retrieval and copy-success-rate scoring."""

from __future__ import annotations

from typing import Sequence

from ..terms import LexicalConstraint, contains_term

MODES = ("soft", "hard")


def _tokens(text) -> list[str]:
    return text.split() if isinstance(text, str) else list(text)


def _occurrences(tokens: list[str], term: tuple[str, ...], raw: bool) -> list[tuple[int, int]]:
    """(start, end_exclusive) of every occurrence, in token or character units."""
    out = []
    if raw:
        text, needle = " ".join(tokens), " ".join(term)
        start = text.find(needle)
        while start >= 0:
            out.append((start, start + len(needle)))
            start = text.find(needle, start + 1)
        return out
    m = len(term)
    for i in range(len(tokens) - m + 1):
        if tuple(tokens[i:i + m]) == term:
            out.append((i, i + m))
    return out


def match_terminology(source, terminology: Sequence[LexicalConstraint],
                      raw_substring: bool = False) -> list[LexicalConstraint]:
    """Constraints whose source term occurs in ``source``.

    Longer terms win over the shorter ones they overlap, then the leftmost
    occurrence wins; accepted matches never overlap. If a source term has
    several entries, the first one listed is used. Results are in source order.
    """
    tokens = _tokens(source)
    first: dict[tuple[str, ...], LexicalConstraint] = {}
    for c in terminology:
        first.setdefault(c.source_term, c)
    cands = []
    for term, c in first.items():
        for start, end in _occurrences(tokens, term, raw_substring):
            cands.append((-(end - start), start, end, c))
    cands.sort(key=lambda t: (t[0], t[1]))
    taken: list[tuple[int, int]] = []
    chosen = []
    for _, start, end, c in cands:
        if any(start < e and s < end for s, e in taken):
            continue
        taken.append((start, end))
        chosen.append((start, c))
    chosen.sort(key=lambda t: t[0])
    return [c for _, c in chosen]


def constraint_satisfied(hypothesis, constraint: LexicalConstraint, mode: str = "soft",
                         raw_substring: bool = False) -> bool:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    hyp = _tokens(hypothesis)
    if mode == "hard":
        return contains_term(hyp, constraint.target_term, raw_substring)
    return any(contains_term(hyp, v, raw_substring) for v in constraint.variants)


def csr_verdicts(hypotheses: Sequence, examples: Sequence, mode: str = "soft",
                 raw_substring: bool = False) -> list[bool]:
    """Per-example satisfaction. ``examples`` carry ``constraint`` and ``polarity``."""
    if len(hypotheses) != len(examples):
        raise ValueError(f"{len(hypotheses)} hypotheses for {len(examples)} examples")
    if mode == "hard" and any(getattr(e, "polarity", "positive") != "positive" for e in examples):
        raise ValueError("hard matching is only defined on positive examples")
    return [constraint_satisfied(h, e.constraint, mode, raw_substring) for h, e in zip(hypotheses, examples)]


def csr(hypotheses: Sequence, examples: Sequence, mode: str = "soft", raw_substring: bool = False) -> float:
    """Percentage of examples whose constraint shows up in the hypothesis (0.0 when empty)."""
    verdicts = csr_verdicts(hypotheses, examples, mode, raw_substring)
    return 100.0 * sum(verdicts) / len(verdicts) if verdicts else 0.0
