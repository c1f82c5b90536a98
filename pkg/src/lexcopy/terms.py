"""Token-boundary term matching shared by filtering, retrieval and scoring."""

from __future__ import annotations

from typing import Sequence


def find_term(tokens: Sequence[str], term: Sequence[str], start: int = 0) -> int:
    """Index of the first whole-token occurrence of ``term`` at or after ``start``, else -1."""
    n, m = len(tokens), len(term)
    if m == 0:
        return -1
    first = term[0]
    for i in range(start, n - m + 1):
        if tokens[i] == first and list(tokens[i:i + m]) == list(term):
            return i
    return -1


def contains_term(tokens: Sequence[str], term: Sequence[str], raw_substring: bool = False) -> bool:
    """Whole-token containment, or plain substring containment of the joined text.

    Raw mode is meant for unsegmented scripts where a term can sit inside a
    longer written word.
    """
    if raw_substring:
        return " ".join(term) in " ".join(tokens)
    return find_term(tokens, term) >= 0


def ngram_set(tokens: Sequence[str], max_n: int) -> set[tuple[str, ...]]:
    out = set()
    for n in range(1, max_n + 1):
        for i in range(len(tokens) - n + 1):
            out.add(tuple(tokens[i:i + n]))
    return out


class LexicalConstraint:
    """A (source term -> target term) pair with optional accepted target variants."""

    __slots__ = ("source_term", "target_term", "soft_variants")

    def __init__(self, source_term, target_term, soft_variants=None):
        self.source_term = tuple(source_term.split() if isinstance(source_term, str) else source_term)
        self.target_term = tuple(target_term.split() if isinstance(target_term, str) else target_term)
        if not self.source_term or not self.target_term:
            raise ValueError("constraint terms must be nonempty")
        self.soft_variants = None
        if soft_variants:
            self.soft_variants = [tuple(v.split() if isinstance(v, str) else v) for v in soft_variants]
            if self.target_term not in self.soft_variants:
                raise ValueError(f"target term {' '.join(self.target_term)!r} missing from its soft variants")

    @property
    def variants(self) -> list[tuple[str, ...]]:
        return self.soft_variants or [self.target_term]

    def to_dict(self) -> dict:
        d = {"src": " ".join(self.source_term), "tgt": " ".join(self.target_term)}
        if self.soft_variants:
            d["variants"] = [" ".join(v) for v in self.soft_variants]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LexicalConstraint":
        return cls(d["src"], d["tgt"], d.get("variants"))

    def __eq__(self, other):
        return (isinstance(other, LexicalConstraint) and self.source_term == other.source_term
                and self.target_term == other.target_term and self.soft_variants == other.soft_variants)

    def __hash__(self):
        return hash((self.source_term, self.target_term))

    def __repr__(self):
        return f"LexicalConstraint({' '.join(self.source_term)!r} -> {' '.join(self.target_term)!r})"
