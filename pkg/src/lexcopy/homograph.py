"""Homograph disambiguation: decide whether a constraint's sense fits a new sentence.

Each decision compares the new sentence with example sentences that show the
intended sense. The homograph's span is pooled from a frozen encoder, the three
pooled vectors are combined into a feature vector, and a two-layer sigmoid
classifier scores it.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import ndgrad as nd
from .ndgrad import Module, Tensor
from .ndgrad.module import xavier, zeros
from .terms import find_term

REASONS = ("keep", "drop", "no-match")


class SplitLeakageError(ValueError):
    """A homograph appears in more than one data split."""


@dataclass
class Triplet:
    """n example sentences followed by the new sentence, all containing ``homograph``.

    ``spans`` holds one inclusive (start, end) token span per sentence.
    """

    homograph: str
    sentences: list[list[str]]
    spans: list[tuple[int, int]]
    label: int

    def __post_init__(self):
        self.sentences = [s.split() if isinstance(s, str) else list(s) for s in self.sentences]
        self.spans = [(int(a), int(b)) for a, b in self.spans]
        if len(self.sentences) < 2:
            raise ValueError("a triplet needs at least one example sentence and the new sentence")
        if len(self.spans) != len(self.sentences):
            raise ValueError("one span per sentence is required")
        if self.label not in (0, 1):
            raise ValueError("label must be 0 or 1")
        surface = self.homograph.split()
        for sent, (a, b) in zip(self.sentences, self.spans):
            if not 0 <= a <= b < len(sent):
                raise ValueError(f"span ({a}, {b}) is outside a {len(sent)}-token sentence")
            if find_term(sent, surface) < 0:
                raise ValueError(f"homograph {self.homograph!r} missing from {' '.join(sent)!r}")

    @property
    def examples(self) -> list[list[str]]:
        return self.sentences[:-1]

    @property
    def new_sentence(self) -> list[str]:
        return self.sentences[-1]

    def to_dict(self) -> dict:
        return {"homograph": self.homograph, "sentences": [" ".join(s) for s in self.sentences],
                "spans": [list(s) for s in self.spans], "label": self.label}

    @classmethod
    def from_dict(cls, d: dict) -> "Triplet":
        return cls(d["homograph"], d["sentences"], d["spans"], int(d["label"]))


def load_triplets(path) -> list[Triplet]:
    return [Triplet.from_dict(json.loads(line))
            for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]


def save_triplets(triplets: Sequence[Triplet], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for t in triplets:
            f.write(json.dumps(t.to_dict(), ensure_ascii=False) + "\n")


# --- pooling and features ----------------------------------------------------------------

def default_k(depth: int) -> int:
    """Two thirds of the encoder depth, rounded up."""
    return max(1, math.ceil(2 * depth / 3))


def pool_layers(layers: Sequence[np.ndarray], span: tuple[int, int], k: int) -> np.ndarray:
    """Mean of the last ``k`` layer outputs ([len, m] each), then mean over the inclusive span."""
    start, end = span
    if end < start:
        raise ValueError("homograph span is empty")
    if not 1 <= k <= len(layers):
        raise ValueError(f"K={k} must lie in [1, {len(layers)}]")
    stacked = np.mean(np.stack([np.asarray(l, dtype=np.float64) for l in layers[-k:]]), axis=0)
    if end >= stacked.shape[0]:
        raise ValueError(f"span end {end} is beyond the {stacked.shape[0]} encoded positions")
    return stacked[start:end + 1].mean(axis=0)


def pool_homograph_embedding(ids: Sequence[int], span: tuple[int, int], encoder, k: int | None = None) -> np.ndarray:
    """Pooled representation of the span in a sentence of token ids (gradients off)."""
    if span[1] < span[0]:
        raise ValueError("homograph span is empty")
    k = default_k(encoder.depth) if k is None else k
    return pool_layers(encoder.all_layers_one(ids), span, k)


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        warnings.warn("zero-norm vector in a cosine similarity; using 0", RuntimeWarning, stacklevel=3)
        return 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def build_feature_vector(u, v, w) -> np.ndarray:
    """z = [u; v; w; |u-v|; |v-w|; |u-w|; cos(u,v); cos(v,w); cos(u,w)], width 6m+3."""
    u, v, w = (np.asarray(x, dtype=np.float64).ravel() for x in (u, v, w))
    if not u.shape == v.shape == w.shape:
        raise ValueError(f"feature inputs differ in width: {u.shape}, {v.shape}, {w.shape}")
    return np.concatenate([u, v, w, np.abs(u - v), np.abs(v - w), np.abs(u - w),
                           [_cosine(u, v), _cosine(v, w), _cosine(u, w)]])


def reference_vectors(pooled_examples: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """(u, v) from n example vectors: one is duplicated, more than two average into v."""
    if not pooled_examples:
        raise ValueError("at least one example sentence is required")
    if len(pooled_examples) == 1:
        return pooled_examples[0], pooled_examples[0]
    return pooled_examples[0], np.mean(np.stack(pooled_examples[1:]), axis=0)


def featurize(triplet: Triplet, encoder, vocab, k: int | None = None) -> np.ndarray:
    pooled = [pool_homograph_embedding(vocab.encode(s), span, encoder, k)
              for s, span in zip(triplet.sentences, triplet.spans)]
    u, v = reference_vectors(pooled[:-1])
    return build_feature_vector(u, v, pooled[-1])


# --- classifier ---------------------------------------------------------------------------

def classify(z, w_r: Tensor, b_r: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """o = sigmoid(max(0, z W_r + b_r) W + b); ``z`` is [6m+3] or [N, 6m+3]."""
    z = z if isinstance(z, Tensor) else Tensor(np.asarray(z, dtype=np.float64))
    if z.shape[-1] != w_r.shape[0]:
        raise nd.ShapeError(f"feature width {z.shape[-1]} does not match W_r of shape {w_r.shape}")
    if w_r.shape[1] != w.shape[0]:
        raise nd.ShapeError(f"W_r {w_r.shape} and W {w.shape} do not chain")
    flat = z.reshape((1, z.shape[0])) if z.ndim == 1 else z
    hidden = nd.relu(flat @ w_r + b_r)
    return nd.sigmoid(hidden @ w + b).reshape(z.shape[:-1])


@dataclass
class ClassifierConfig:
    epochs: int = 200
    lr: float = 1e-2
    batch_size: int = 64
    weight_decay: float = 0.0
    threshold: float = 0.5
    k_layers: int | None = None
    class_weighting: bool = True
    seed: int = 0


class HomographClassifier(Module):
    """Two-layer scorer over feature vectors of width 6m+3 with m hidden units."""

    def __init__(self, m: int, seed: int = 0, threshold: float = 0.5, k_layers: int | None = None):
        self.m = m
        self.threshold = threshold
        self.k_layers = k_layers
        width = 6 * m + 3
        self.w_r = xavier(seed, "homograph.w_r", width, m)
        self.b_r = zeros("homograph.b_r", (m,))
        self.w = xavier(seed, "homograph.w", m, 1)
        self.b = zeros("homograph.b", (1,))

    def __call__(self, z) -> Tensor:
        return classify(z, self.w_r, self.b_r, self.w, self.b)

    def score(self, z) -> np.ndarray | float:
        with nd.no_grad():
            o = self(z).data
        return float(o) if o.ndim == 0 else o

    def predict(self, z, threshold: float | None = None):
        t = self.threshold if threshold is None else threshold
        return (np.asarray(self.score(z)) >= t).astype(np.int64)


def binary_metrics(y_true, y_pred) -> dict:
    """Accuracy plus precision, recall and F1 for each class."""
    y_true, y_pred = np.asarray(y_true), np.asarray(y_pred)
    out = {"accuracy": float((y_true == y_pred).mean()) if len(y_true) else 0.0, "n": int(len(y_true))}
    for c in (0, 1):
        tp = int(((y_pred == c) & (y_true == c)).sum())
        fp = int(((y_pred == c) & (y_true != c)).sum())
        fn = int(((y_pred != c) & (y_true == c)).sum())
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        out[f"class_{c}"] = {"precision": p, "recall": r, "f1": 2 * p * r / (p + r) if p + r else 0.0,
                             "support": int((y_true == c).sum())}
    return out


def fit_classifier(features: np.ndarray, labels, config: ClassifierConfig = ClassifierConfig()) -> HomographClassifier:
    """Minibatch AdamW on class-weighted binary cross-entropy."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if x.ndim != 2 or (x.shape[1] - 3) % 6:
        raise ValueError(f"features must be [N, 6m+3], got {x.shape}")
    m = (x.shape[1] - 3) // 6
    clf = HomographClassifier(m, config.seed, config.threshold, config.k_layers)
    n1 = y.sum()
    n0 = len(y) - n1
    if config.class_weighting and n0 and n1:
        weights = np.where(y > 0.5, len(y) / (2 * n1), len(y) / (2 * n0))
    else:
        weights = np.ones_like(y)
    params = clf.parameters()
    state = nd.OptimizerState(learning_rate=config.lr, beta1=0.9, beta2=0.999,
                              weight_decay=config.weight_decay, clip_norm=1e9)
    rng = np.random.default_rng(config.seed)
    for _ in range(config.epochs):
        order = rng.permutation(len(y))
        for start in range(0, len(y), config.batch_size):
            idx = order[start:start + config.batch_size]
            clf.zero_grad()
            o = clf(x[idx])
            yi, wi = y[idx], weights[idx]
            bce = -(nd.log(o, floor=1e-12) * (yi * wi) + nd.log(1.0 - o, floor=1e-12) * ((1 - yi) * wi)).sum()
            nd.backward(bce * (1.0 / len(idx)))
            nd.adamw_step(params, state)
    return clf


def check_disjoint(*splits: Sequence[Triplet]) -> None:
    seen: dict[str, int] = {}
    for i, split in enumerate(splits):
        for h in {t.homograph for t in split}:
            if h in seen and seen[h] != i:
                raise SplitLeakageError(f"homograph {h!r} occurs in splits {seen[h]} and {i}")
            seen[h] = i


def split_by_homograph(triplets: Sequence[Triplet], fractions: Sequence[float] = (0.8, 0.1, 0.1),
                       seed: int = 0) -> list[list[Triplet]]:
    """Partition by homograph so that no surface form is shared across splits."""
    words = sorted({t.homograph for t in triplets})
    order = np.random.default_rng(seed).permutation(len(words))
    bounds = np.floor(np.cumsum(fractions) / np.sum(fractions) * len(words)).astype(int)
    groups, prev = [], 0
    for b in bounds:
        groups.append({words[i] for i in order[prev:b]})
        prev = b
    return [[t for t in triplets if t.homograph in g] for g in groups]


def train_classifier(train: Sequence[Triplet], val: Sequence[Triplet], encoder, vocab,
                     config: ClassifierConfig = ClassifierConfig()) -> tuple[HomographClassifier, dict]:
    """Fit the classifier on frozen-encoder features; report validation metrics."""
    check_disjoint(train, val)
    if not train:
        raise ValueError("no training triplets")
    k = config.k_layers if config.k_layers is not None else default_k(encoder.depth)
    x = np.stack([featurize(t, encoder, vocab, k) for t in train])
    clf = fit_classifier(x, [t.label for t in train], config)
    clf.k_layers = k
    metrics = {"train": binary_metrics([t.label for t in train], clf.predict(x))}
    if val:
        xv = np.stack([featurize(t, encoder, vocab, k) for t in val])
        metrics["val"] = binary_metrics([t.label for t in val], clf.predict(xv))
    return clf, metrics


# --- constraint decisions -------------------------------------------------------------------

@dataclass
class Decision:
    constraint: object
    keep: bool
    score: float | None
    reason: str
    details: dict = field(default_factory=dict)


def _locate(tokens: Sequence[str], term: Sequence[str], span=None) -> tuple[int, int] | None:
    if span is not None:
        return tuple(span)
    i = find_term(tokens, term)
    return None if i < 0 else (i, i + len(term) - 1)


def decide_constraints(example, classifier, encoder, vocab, positive_refs=None,
                       threshold: float | None = None) -> list[Decision]:
    """Keep or drop the example's constraint by scoring (refs, new sentence).

    The constraint is kept iff the classifier's score reaches the threshold.
    When the homograph cannot be found in the new sentence the constraint is
    dropped with reason "no-match".
    """
    constraints = getattr(example, "constraints", None) or [example.constraint]
    refs = positive_refs if positive_refs is not None else example.positive_refs
    t = getattr(classifier, "threshold", 0.5) if threshold is None else threshold
    k = getattr(classifier, "k_layers", None) or default_k(encoder.depth)
    decisions = []
    for c in constraints:
        term = c.source_term
        span = _locate(example.source, term, getattr(example, "span", None))
        if span is None:
            decisions.append(Decision(c, False, None, "no-match"))
            continue
        pooled = []
        for ref in refs:
            ref_span = _locate(ref, term)
            if ref_span is None:
                raise ValueError(f"positive reference lacks the term {' '.join(term)!r}")
            pooled.append(pool_homograph_embedding(vocab.encode(ref), ref_span, encoder, k))
        u, v = reference_vectors(pooled)
        w = pool_homograph_embedding(vocab.encode(example.source), span, encoder, k)
        score = float(classifier.score(build_feature_vector(u, v, w)))
        keep = score >= t
        decisions.append(Decision(c, keep, score, "keep" if keep else "drop"))
    return decisions


class HomographFilter:
    """Bundles classifier, encoder and vocabulary for use in benchmark runs."""

    def __init__(self, classifier, encoder, vocab, threshold: float | None = None):
        self.classifier = classifier
        self.encoder = encoder
        self.vocab = vocab
        self.threshold = threshold

    def decide(self, example) -> Decision:
        return decide_constraints(example, self.classifier, self.encoder, self.vocab,
                                  threshold=self.threshold)[0]


def save_classifier(clf: HomographClassifier, path) -> None:
    """Weights in the checkpoint format plus a JSON sidecar with m, threshold and K."""
    path = Path(path)
    nd.save_checkpoint(path, clf.state_dict())
    meta = {"m": clf.m, "threshold": clf.threshold, "k_layers": clf.k_layers}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta), encoding="utf-8")


def load_classifier(path) -> HomographClassifier:
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text(encoding="utf-8"))
    clf = HomographClassifier(meta["m"], threshold=meta["threshold"], k_layers=meta["k_layers"])
    clf.load_state_dict(nd.load_checkpoint(path))
    return clf
