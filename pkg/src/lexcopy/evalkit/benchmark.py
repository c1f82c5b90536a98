"""Benchmark records, file formats and the end-to-end evaluation run."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from ..terms import LexicalConstraint
from .bleu import corpus_bleu
from .bootstrap import paired_bootstrap
from .matching import csr, match_terminology

POLARITIES = ("positive", "negative")


@dataclass
class TestExample:
    id: str
    source: list[str]
    reference: list[str]
    constraint: LexicalConstraint
    polarity: str = "positive"
    positive_refs: list[list[str]] = field(default_factory=list)
    span: tuple[int, int] | None = None   # inclusive token span of the source term

    __test__ = False  # keep pytest from collecting this class

    def __post_init__(self):
        if self.polarity not in POLARITIES:
            raise ValueError(f"polarity must be one of {POLARITIES}, got {self.polarity!r}")
        self.source = _tok(self.source)
        self.reference = _tok(self.reference)
        self.positive_refs = [_tok(r) for r in self.positive_refs]
        if self.span is not None:
            self.span = (int(self.span[0]), int(self.span[1]))

    def to_dict(self) -> dict:
        d = {"id": self.id, "source": " ".join(self.source), "reference": " ".join(self.reference),
             "constraint": self.constraint.to_dict(), "polarity": self.polarity,
             "positive_refs": [" ".join(r) for r in self.positive_refs]}
        if self.span is not None:
            d["span"] = list(self.span)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TestExample":
        for key in ("id", "source", "reference", "constraint", "polarity"):
            if key not in d:
                raise ValueError(f"benchmark record lacks field {key!r}")
        return cls(str(d["id"]), d["source"], d["reference"], LexicalConstraint.from_dict(d["constraint"]),
                   d["polarity"], d.get("positive_refs", []), d.get("span"))


def _tok(text) -> list[str]:
    return text.split() if isinstance(text, str) else list(text)


def load_benchmark(path) -> list[TestExample]:
    out = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            out.append(TestExample.from_dict(json.loads(line)))
        except (ValueError, KeyError, TypeError) as err:
            raise ValueError(f"{path}:{lineno}: {err}") from err
    return out


def save_benchmark(examples: Sequence[TestExample], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for e in examples:
            f.write(json.dumps(e.to_dict(), ensure_ascii=False) + "\n")


def load_terminology(path) -> list[LexicalConstraint]:
    """TSV lines ``source_term<TAB>target_term``; blank lines and '#' comments skipped."""
    out = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected two tab-separated fields")
        out.append(LexicalConstraint(parts[0].strip(), parts[1].strip()))
    return out


def save_terminology(constraints: Sequence[LexicalConstraint], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for c in constraints:
            f.write(f"{' '.join(c.source_term)}\t{' '.join(c.target_term)}\n")


def _polarity_block(hyps, examples) -> dict:
    block = {"n": len(examples), "bleu": corpus_bleu(hyps, [e.reference for e in examples]),
             "csr_soft": csr(hyps, examples, "soft")}
    if examples and examples[0].polarity == "positive":
        block["csr_hard"] = csr(hyps, examples, "hard")
    return block


def run_benchmark(translator, examples: Sequence[TestExample], classifier=None, correction: bool = False,
                  baseline_hypotheses: Sequence[Sequence[str]] | None = None, n_resamples: int = 1000,
                  seed: int = 0) -> dict:
    """Translate every example and score it.

    A constraint is applied when its source term matches the source sentence.
    With ``correction`` the ``classifier`` (anything with ``decide(example)``
    returning a decision with ``keep``, ``score`` and ``reason``) may drop it
    first. ``translator.translate_batch(sources, constraint_lists)`` produces
    token lists. Passing ``baseline_hypotheses`` adds a paired-bootstrap
    p-value for "this run is at least as good as the baseline" on BLEU.
    """
    if correction and classifier is None:
        raise ValueError("correction requested without a classifier")
    examples = list(examples)
    if not examples:
        return {"n_examples": 0, "bleu": None, "csr_soft": None, "csr_hard": None,
                "per_polarity": {}, "decisions": [], "hypotheses": []}
    applied, decisions = [], []
    for e in examples:
        matched = match_terminology(e.source, [e.constraint])
        record = {"id": e.id, "polarity": e.polarity, "matched": bool(matched), "kept": bool(matched),
                  "score": None, "reason": "keep" if matched else "no-match"}
        if matched and correction:
            d = classifier.decide(e)
            record.update(kept=bool(d.keep), score=d.score, reason=d.reason)
        applied.append([e.constraint] if record["kept"] else [])
        decisions.append(record)
    hyps = translator.translate_batch([e.source for e in examples], applied)
    pos = [i for i, e in enumerate(examples) if e.polarity == "positive"]
    neg = [i for i, e in enumerate(examples) if e.polarity == "negative"]
    report = {
        "n_examples": len(examples),
        "bleu": corpus_bleu(hyps, [e.reference for e in examples]),
        "csr_soft": csr(hyps, examples, "soft"),
        "csr_hard": csr([hyps[i] for i in pos], [examples[i] for i in pos], "hard") if pos else None,
        "per_polarity": {},
        "decisions": decisions,
        "hypotheses": [" ".join(h) for h in hyps],
    }
    for name, idx in (("positive", pos), ("negative", neg)):
        if idx:
            report["per_polarity"][name] = _polarity_block([hyps[i] for i in idx], [examples[i] for i in idx])
    if baseline_hypotheses is not None:
        report["significance"] = {
            "metric": "bleu", "n_resamples": n_resamples,
            "p_value": paired_bootstrap(list(baseline_hypotheses), hyps, [e.reference for e in examples],
                                        "bleu", n_resamples, seed)}
    return report


def format_report_table(rows: dict[str, dict]) -> str:
    """Plain-text table, one row per named run: BLEU, CSR soft/hard, CSR by polarity."""
    header = ["system", "BLEU", "CSR soft", "CSR hard", "CSR pos", "CSR neg"]
    lines = []

    def fmt(v):
        return "-" if v is None else f"{v:.2f}"

    for name, r in rows.items():
        pp = r.get("per_polarity", {})
        lines.append([name, fmt(r.get("bleu")), fmt(r.get("csr_soft")), fmt(r.get("csr_hard")),
                      fmt(pp.get("positive", {}).get("csr_soft")), fmt(pp.get("negative", {}).get("csr_soft"))])
    widths = [max(len(header[i]), *(len(l[i]) for l in lines)) if lines else len(header[i])
              for i in range(len(header))]
    out = [" | ".join(h.ljust(w) for h, w in zip(header, widths)),
           "-+-".join("-" * w for w in widths)]
    out += [" | ".join(c.ljust(w) for c, w in zip(l, widths)) for l in lines]
    return "\n".join(out)
