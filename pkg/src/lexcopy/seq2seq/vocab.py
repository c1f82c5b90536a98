from __future__ import annotations

from collections import Counter
from pathlib import Path
from typing import Iterable, Sequence

PAD, BOS, EOS, UNK, SEP = "<pad>", "<bos>", "<eos>", "<unk>", "<sep>"
RESERVED = (PAD, BOS, EOS, UNK, SEP)


class Vocabulary:
    """Joint source/target token table.

    Ids 0-4 are reserved. Other tokens are numbered in descending frequency
    (ties broken alphabetically), so a saved file keeps frequency ranks.
    """

    pad_id, bos_id, eos_id, unk_id, sep_id = range(5)

    def __init__(self, tokens: Sequence[str], counts: dict[str, int] | None = None):
        if tuple(tokens[:5]) != RESERVED:
            raise ValueError(f"first five tokens must be {RESERVED}")
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self.itos = list(tokens)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        self.counts = dict(counts or {})

    @classmethod
    def build(cls, sentences: Iterable[Sequence[str]], extra: Iterable[str] = ()) -> "Vocabulary":
        counts = Counter(tok for sent in sentences for tok in sent if tok not in RESERVED)
        for tok in extra:
            counts.setdefault(tok, 0)
        ordered = sorted(counts, key=lambda t: (-counts[t], t))
        return cls(list(RESERVED) + ordered, dict(counts))

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.stoi.get(t, self.unk_id) for t in tokens]

    def decode(self, ids: Iterable[int], strip_special: bool = True) -> list[str]:
        out = []
        for i in ids:
            if strip_special and i < len(RESERVED):
                continue
            out.append(self.itos[i])
        return out

    def top_frequent(self, n: int) -> set[int]:
        """Ids of the ``n`` most frequent non-reserved tokens."""
        ids = range(len(RESERVED), len(self.itos))
        if self.counts:
            ids = sorted(ids, key=lambda i: (-self.counts.get(self.itos[i], 0), i))
        return set(list(ids)[:max(n, 0)])

    def save(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.itos), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        tokens = Path(path).read_text(encoding="utf-8").split("\n")
        if tokens and tokens[-1] == "":
            tokens.pop()
        return cls(tokens)


def read_corpus(src_path, tgt_path) -> list[tuple[list[str], list[str]]]:
    """Two aligned whitespace-pretokenized UTF-8 files, one sentence per line."""
    src = Path(src_path).read_text(encoding="utf-8").splitlines()
    tgt = Path(tgt_path).read_text(encoding="utf-8").splitlines()
    if len(src) != len(tgt):
        raise ValueError(f"corpus sides differ in length: {len(src)} vs {len(tgt)}")
    return [(s.split(), t.split()) for s, t in zip(src, tgt)]


def write_corpus(pairs, src_path, tgt_path) -> None:
    Path(src_path).write_text("".join(" ".join(s) + "\n" for s, _ in pairs), encoding="utf-8")
    Path(tgt_path).write_text("".join(" ".join(t) + "\n" for _, t in pairs), encoding="utf-8")
