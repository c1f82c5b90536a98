"""A small synthetic translation world for controlled experiments.

Source and target tokens map one to one and translation is monotone, so a
reference translation is always known. Term slots are written as a term token
followed by the particle ``ul`` (translated ``of``). Three groups of term pairs
exist:

* seen terms, present in training;
* novel terms, whose pairs are held out of training by corpus filtering;
* homographs, a source token with two senses. Each sense belongs to a
  topic, a fixed subset of the ordinary words that then makes up the rest
  of the sentence. Sense B (``B*``) is seen in training; sense A (``A*``)
  is held out.

Seen terms also get two topics each. They translate the same either
way, which makes them usable as stand-in homographs for training the
disambiguation classifier without touching the benchmark homographs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .evalkit.benchmark import TestExample
from .homograph import Triplet
from .seq2seq.vocab import Vocabulary
from .terms import LexicalConstraint
from .train import filter_training_data

PARTICLE_SRC, PARTICLE_TGT = "ul", "of"
N_REGULAR, N_SEEN, N_NOVEL, N_HOMOGRAPH = 24, 18, 41, 9
N_TOPICS = 4


@dataclass(frozen=True)
class SenseWord:
    """A source word with two context patterns; each sense has its own translation."""

    source: str
    target_a: str
    target_b: str
    context_a: tuple[str, ...]
    context_b: tuple[str, ...]

    def target(self, sense: str) -> str:
        return self.target_a if sense == "a" else self.target_b

    def context(self, sense: str) -> tuple[str, ...]:
        return self.context_a if sense == "a" else self.context_b


class SyntheticWorld:
    def __init__(self, seed: int = 0, min_len: int = 4, max_len: int = 9):
        rng = np.random.default_rng(seed)
        self.seed = seed
        self.min_len, self.max_len = min_len, max_len
        self.regular = {f"r{i:02d}": f"R{i:02d}" for i in range(N_REGULAR)}
        self.seen_terms = {f"t{i:02d}": f"T{i:02d}" for i in range(N_SEEN)}
        self.novel_terms = {f"n{i:02d}": f"N{i:02d}" for i in range(N_NOVEL)}
        reg = sorted(self.regular)

        shuffled = [reg[i] for i in rng.permutation(len(reg))]
        self.topics = [tuple(sorted(shuffled[i::N_TOPICS])) for i in range(N_TOPICS)]

        def pair_contexts(count: int) -> list[tuple[tuple[str, ...], tuple[str, ...]]]:
            out = []
            for _ in range(count):
                a, b = rng.choice(N_TOPICS, size=2, replace=False)
                out.append((self.topics[a], self.topics[b]))
            return out

        self.homographs = [SenseWord(f"h{i}", f"A{i}", f"B{i}", a, b)
                           for i, (a, b) in enumerate(pair_contexts(N_HOMOGRAPH))]
        self.pseudo_homographs = [SenseWord(s, t, t, a, b)
                                  for (s, t), (a, b) in zip(sorted(self.seen_terms.items()),
                                                            pair_contexts(N_SEEN))]
        self.lexicon = {PARTICLE_SRC: PARTICLE_TGT, **self.regular, **self.seen_terms, **self.novel_terms}
        for h in self.homographs:
            self.lexicon[h.source] = h.target_b
        self._by_source = {w.source: w for w in self.homographs}

    # --- vocabulary -------------------------------------------------------------------------
    def source_tokens(self) -> list[str]:
        return [PARTICLE_SRC, *self.regular, *self.seen_terms, *self.novel_terms,
                *(h.source for h in self.homographs)]

    def target_tokens(self) -> list[str]:
        return [PARTICLE_TGT, *self.regular.values(), *self.seen_terms.values(), *self.novel_terms.values(),
                *(h.target_b for h in self.homographs), *(h.target_a for h in self.homographs)]

    def all_tokens(self) -> list[str]:
        return self.source_tokens() + self.target_tokens()

    def vocabulary(self, corpus: Sequence[tuple[Sequence[str], Sequence[str]]]) -> Vocabulary:
        """Joint vocabulary over every world token, ranked by frequency in ``corpus``."""
        return Vocabulary.build([s for s, _ in corpus] + [t for _, t in corpus], extra=self.all_tokens())

    def held_out_targets(self) -> set[str]:
        return set(self.novel_terms.values()) | {h.target_a for h in self.homographs}

    def held_out_constraints(self) -> list[LexicalConstraint]:
        return ([LexicalConstraint(s, t) for s, t in self.novel_terms.items()]
                + [LexicalConstraint(h.source, h.target_a) for h in self.homographs])

    def seen_constraints(self) -> list[LexicalConstraint]:
        return [LexicalConstraint(s, t) for s, t in self.seen_terms.items()]

    # --- sentences ---------------------------------------------------------------------------
    def _filler(self, rng: np.random.Generator, n: int, pool: Sequence[str] | None = None) -> list[str]:
        pool = sorted(self.regular) if pool is None else list(pool)
        return [pool[i] for i in rng.integers(0, len(pool), size=n)]

    def sentence(self, rng: np.random.Generator, term: str | None = None, sense: str | None = None,
                 context: Sequence[str] | None = None) -> tuple[list[str], list[str], int | None]:
        """(source, target, index of the term token or None).

        ``sense`` picks a homograph (or pseudo-homograph) context: the filler
        words are then drawn from that sense's topic words only. An explicit
        ``context`` pool overrides it.
        """
        target = self.lexicon[term] if term is not None else None
        if sense is not None and term is not None:
            word = self._by_source.get(term) or next((w for w in self.pseudo_homographs if w.source == term), None)
            if word is not None:
                context = word.context(sense)
                target = word.target(sense)
        n = int(rng.integers(self.min_len, self.max_len + 1))
        src = self._filler(rng, n, context)
        tgt = [self.regular[t] for t in src]
        if term is None:
            return src, tgt, None
        pos = int(rng.integers(0, n + 1))
        src[pos:pos] = [term, PARTICLE_SRC]
        tgt[pos:pos] = [target, PARTICLE_TGT]
        return src, tgt, pos

    def translate(self, source: Sequence[str], senses: dict[int, str] | None = None) -> list[str]:
        """Reference translation; ``senses`` maps token index to a homograph sense (default B)."""
        senses = senses or {}
        out = []
        for i, tok in enumerate(source):
            if i in senses and tok in self._by_source:
                out.append(self._by_source[tok].target(senses[i]))
            else:
                out.append(self.lexicon[tok])
        return out

    def full_corpus(self, n: int, rng: np.random.Generator) -> list[tuple[list[str], list[str]]]:
        """Unfiltered corpus. Mix: plain, seen term (two thirds with a sense context),
        novel term, homograph in either sense."""
        pairs = []
        seen, novel = sorted(self.seen_terms), sorted(self.novel_terms)
        kinds = rng.choice(5, size=n, p=[0.25, 0.35, 0.15, 0.15, 0.10])
        for kind in kinds:
            if kind == 0:
                src, tgt, _ = self.sentence(rng)
            elif kind == 1:
                term = seen[int(rng.integers(len(seen)))]
                sense = ("a", "b", None)[int(rng.integers(3))]
                src, tgt, _ = self.sentence(rng, term, sense)
            elif kind == 2:
                src, tgt, _ = self.sentence(rng, novel[int(rng.integers(len(novel)))])
            elif kind == 3:
                a, b = seen[int(rng.integers(len(seen)))], seen[int(rng.integers(len(seen)))]
                src, tgt, _ = self.sentence(rng, a)
                # Insert a second slot at a boundary that does not split the first.
                cut = [i for i in range(len(src) + 1) if i == 0 or src[i - 1] != a]
                pos = cut[int(rng.integers(len(cut)))]
                src[pos:pos] = [b, PARTICLE_SRC]
                tgt[pos:pos] = [self.seen_terms[b], PARTICLE_TGT]
            else:
                h = self.homographs[int(rng.integers(len(self.homographs)))]
                src, tgt, _ = self.sentence(rng, h.source, "a" if rng.random() < 0.5 else "b")
            pairs.append((src, tgt))
        return pairs

    def training_corpus(self, min_pairs: int = 5000, seed: int | None = None):
        """Filtered training pairs (>= ``min_pairs``), the removal count and the
        unfiltered corpus (whose source side feeds the context encoder)."""
        rng = np.random.default_rng(self.seed + 1 if seed is None else seed)
        n = int(min_pairs / 0.75) + 200
        while True:
            full = self.full_corpus(n, rng)
            kept, removed = filter_training_data(full, self.held_out_constraints())
            if len(kept) >= min_pairs:
                return kept, removed, full
            n = int(n * 1.2)

    # --- evaluation sets ------------------------------------------------------------------------
    def constraint_test_set(self, kind: str, n: int, rng: np.random.Generator) -> list[TestExample]:
        """Sentences with one term slot and that term as the constraint.

        ``kind`` is "unseen" (novel terms and homographs in their held-out
        sense, so every target term is absent from training) or "seen".
        """
        out = []
        for i in range(n):
            if kind == "unseen":
                j = i % (N_NOVEL + N_HOMOGRAPH)
                if j < N_NOVEL:
                    term = sorted(self.novel_terms)[j]
                    src, tgt, _ = self.sentence(rng, term)
                    c = LexicalConstraint(term, self.novel_terms[term])
                else:
                    h = self.homographs[j - N_NOVEL]
                    src, tgt, _ = self.sentence(rng, h.source, "a")
                    c = LexicalConstraint(h.source, h.target_a)
            elif kind == "seen":
                term = sorted(self.seen_terms)[i % N_SEEN]
                src, tgt, _ = self.sentence(rng, term)
                c = LexicalConstraint(term, self.seen_terms[term])
            else:
                raise ValueError("kind must be 'unseen' or 'seen'")
            out.append(TestExample(f"{kind}-{i}", src, tgt, c, "positive"))
        return out

    def _refs(self, rng, word: SenseWord, sense: str, n: int = 2) -> list[list[str]]:
        return [self.sentence(rng, word.source, sense)[0] for _ in range(n)]

    def homograph_benchmark(self, n_positive: int, n_negative: int, rng: np.random.Generator) -> list[TestExample]:
        """Constraints always ask for the held-out sense A.

        Positives use sense A (the constraint fits); negatives use sense B,
        where the constraint is wrong and the reference keeps the B word.
        """
        out = []
        for i in range(n_positive + n_negative):
            positive = i < n_positive
            h = self.homographs[i % N_HOMOGRAPH]
            sense = "a" if positive else "b"
            src, tgt, idx = self.sentence(rng, h.source, sense)
            c = LexicalConstraint(h.source, h.target_a)
            out.append(TestExample(f"{'pos' if positive else 'neg'}-{i}", src, tgt, c,
                                   "positive" if positive else "negative", self._refs(rng, h, "a"),
                                   (idx, idx)))
        return out

    def triplets(self, words: str, n: int, rng: np.random.Generator, n_refs: int = 2) -> list[Triplet]:
        """Balanced triplets; ``words`` is "pseudo" (seen terms) or "homograph"."""
        pool = self.pseudo_homographs if words == "pseudo" else self.homographs
        out = []
        for i in range(n):
            w = pool[int(rng.integers(len(pool)))]
            ref_sense = "a" if rng.random() < 0.5 else "b"
            label = int(i % 2 == 0)
            new_sense = ref_sense if label else ("b" if ref_sense == "a" else "a")
            sents, spans = [], []
            for sense in [ref_sense] * n_refs + [new_sense]:
                s, _, idx = self.sentence(rng, w.source, sense)
                sents.append(s)
                spans.append((idx, idx))
            out.append(Triplet(w.source, sents, spans, label))
        return out


def gaussian_sense_features(n_words: int, per_word: int, m: int, seed: int = 0, spread: float = 0.3,
                            shuffle_labels: bool = False):
    """Feature vectors from two Gaussian sense clusters per word.

    Returns (features [N, 6m+3], labels, word ids). Reference vectors come from
    one cluster; the new vector from the same cluster (label 1) or the other.
    """
    from .homograph import build_feature_vector

    rng = np.random.default_rng(seed)
    feats, labels, groups = [], [], []
    for w in range(n_words):
        centers = rng.normal(size=(2, m))
        for i in range(per_word):
            ref = int(rng.integers(2))
            label = int(i % 2 == 0)
            new = ref if label else 1 - ref
            u, v, x = (centers[c] + spread * rng.normal(size=m) for c in (ref, ref, new))
            feats.append(build_feature_vector(u, v, x))
            labels.append(label)
            groups.append(w)
    labels = np.asarray(labels)
    if shuffle_labels:
        labels = rng.permutation(labels)
    return np.stack(feats), labels, np.asarray(groups)


def encode_corpus(vocab: Vocabulary, corpus) -> list[tuple[list[int], list[int]]]:
    return [(vocab.encode(s), vocab.encode(t)) for s, t in corpus]

