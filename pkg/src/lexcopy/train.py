"""Training pipeline for the constraint-aware translation model."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import ndgrad as nd
from .fusion import ContextCache
from .ndgrad import Tensor
from .seq2seq.model import ConstrainedTransformer
from .seq2seq.vocab import Vocabulary
from .terms import LexicalConstraint, ngram_set

log = logging.getLogger(__name__)

K_DISTRIBUTION = (0.3, 0.2, 0.25, 0.25)
CLASS_WEIGHTINGS = ("mean", "fraction")


class TrainingError(RuntimeError):
    pass


def default_top_f(vocab_size: int) -> int:
    """1,500 excluded words out of 32K, rescaled to the vocabulary at hand."""
    return int(round(1500 * vocab_size / 32000))


# --- constraint sampling -------------------------------------------------------------

def sample_constraints(y: Sequence[int], vocab: Vocabulary | None, rng: np.random.Generator,
                       top_f: int | None = None, k_distribution: Sequence[float] = K_DISTRIBUTION,
                       max_span: int = 3, exclude: set[int] | None = None) -> list[tuple[int, int]]:
    """Sample up to ``len(k_distribution) - 1`` non-overlapping target spans.

    Spans are inclusive (start, end) index pairs into ``y``, contain 1 to
    ``max_span`` tokens, and avoid the ``top_f`` most frequent tokens and the
    reserved ids. Fewer spans than drawn are returned when ``y`` runs out of
    eligible tokens. The result is sorted by position.
    """
    if exclude is None:
        f = default_top_f(len(vocab)) if top_f is None else top_f
        exclude = vocab.top_frequent(f)
    k = int(rng.choice(len(k_distribution), p=np.asarray(k_distribution) / np.sum(k_distribution)))
    ok = [t >= Vocabulary.sep_id + 1 and t not in exclude for t in y]
    taken = [False] * len(y)
    spans: list[tuple[int, int]] = []
    for _ in range(k):
        lengths = list(range(1, max_span + 1))
        want = int(rng.integers(1, max_span + 1))
        # Try the drawn length first, then shorter ones.
        for ln in [want] + [l for l in reversed(lengths) if l < want]:
            starts = [i for i in range(len(y) - ln + 1)
                      if all(ok[j] and not taken[j] for j in range(i, i + ln))]
            if starts:
                s = starts[int(rng.integers(len(starts)))]
                for j in range(s, s + ln):
                    taken[j] = True
                spans.append((s, s + ln - 1))
                break
        else:
            break
    return sorted(spans)


def build_modified_source(x: Sequence[int], constraints: Sequence[Sequence[int]],
                          max_positions: int | None = None,
                          sep_id: int = Vocabulary.sep_id) -> tuple[list[int], list[int]]:
    """X-hat = X followed by one (<sep>, target term) block per constraint, plus segment ids."""
    x_hat = list(x)
    for term in constraints:
        x_hat.append(sep_id)
        x_hat.extend(term)
    segments = [0] * len(x) + [1] * (len(x_hat) - len(x))
    if max_positions is not None and len(x_hat) > max_positions:
        raise ValueError(f"modified source has {len(x_hat)} tokens (source {len(x)}), "
                         f"exceeding max_positions {max_positions}")
    return x_hat, segments


# --- copy supervision ------------------------------------------------------------------

@dataclass
class CopySupervision:
    gold: np.ndarray        # g_t in {0, 1}, one per target position
    n_copy: int
    n_noncopy: int
    alpha: float            # weight on non-copy positions
    beta: float             # weight on copy positions


def class_weights(n_copy: int, n_noncopy: int, class_weighting: str = "mean") -> tuple[float, float]:
    if class_weighting == "mean":
        return 1.0 / max(1, n_noncopy), 1.0 / max(1, n_copy)
    if class_weighting == "fraction":
        total = max(1, n_copy + n_noncopy)
        return n_noncopy / total, n_copy / total
    raise ValueError(f"class_weighting must be one of {CLASS_WEIGHTINGS}")


def gold_copy_labels(y: Sequence[int] | int, spans: Sequence[tuple[int, int]],
                     class_weighting: str = "mean") -> CopySupervision:
    """g_t = 1 exactly on positions covered by the (inclusive) constraint spans."""
    n = y if isinstance(y, int) else len(y)
    gold = np.zeros(n)
    for start, end in spans:
        if start < 0 or end >= n or end < start:
            raise IndexError(f"span ({start}, {end}) out of range for a length-{n} target")
        gold[start:end + 1] = 1.0
    n_copy = int(gold.sum())
    a, b = class_weights(n_copy, n - n_copy, class_weighting)
    return CopySupervision(gold, n_copy, n - n_copy, a, b)


def copy_supervised_loss(p_final: Tensor, targets, g_copy: Tensor,
                         supervision: CopySupervision | Sequence[CopySupervision], lam: float = 0.2,
                         reduction: str = "sum") -> tuple[Tensor, Tensor, Tensor]:
    """L = NLL - lam * J, summed over sentences.

    J = alpha * sum_{t not copied} (1 - g_t) log(1 - g_copy_t)
      + beta * sum_{t copied} g_t log(g_copy_t), logs clamped at 1e-12.
    ``p_final`` is [T, V] or [B, T, V]; padded target positions are those past
    each supervision's length. ``reduction="token_mean"`` divides by the number
    of target tokens. Returns (loss, nll, J), all scalars.
    """
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    single = isinstance(supervision, CopySupervision)
    sups = [supervision] if single else list(supervision)
    targets = np.asarray(targets)
    if single:
        p_final = p_final.reshape((1,) + p_final.shape)
        g_copy = g_copy.reshape((1,) + g_copy.shape)
        targets = targets[None]
    b, t = targets.shape
    gold = np.zeros((b, t))
    valid = np.zeros((b, t))
    alpha = np.zeros((b, 1))
    beta = np.zeros((b, 1))
    for i, s in enumerate(sups):
        gold[i, : len(s.gold)] = s.gold
        valid[i, : len(s.gold)] = 1.0
        alpha[i], beta[i] = s.alpha, s.beta
    p_gold = nd.gather_last(p_final, np.where(valid > 0, targets, 0))
    nll = -(nd.log(p_gold, floor=1e-12) * valid).sum()
    noncopy = valid * (1.0 - gold)
    copy = valid * gold
    j = ((nd.log(1.0 - g_copy, floor=1e-12) * (noncopy * alpha)).sum()
         + (nd.log(g_copy, floor=1e-12) * (copy * beta)).sum())
    loss = nll - j * lam
    if reduction == "token_mean":
        n_tok = 1.0 / max(valid.sum(), 1.0)
        return loss * n_tok, nll * n_tok, j * (1.0 / b)
    if reduction != "sum":
        raise ValueError("reduction must be 'sum' or 'token_mean'")
    return loss, nll, j


# --- corpus filtering ------------------------------------------------------------------

def filter_training_data(corpus: Sequence[tuple[Sequence[str], Sequence[str]]],
                         test_constraints: Sequence[LexicalConstraint]):
    """Drop pairs holding some constraint's source term in the source AND its
    target term in the target (whole-token matches). Returns (kept, n_removed)."""
    if not test_constraints:
        return list(corpus), 0
    max_src = max(len(c.source_term) for c in test_constraints)
    max_tgt = max(len(c.target_term) for c in test_constraints)
    by_source: dict[tuple[str, ...], set[tuple[str, ...]]] = {}
    for c in test_constraints:
        by_source.setdefault(c.source_term, set()).add(c.target_term)
    kept = []
    for src, tgt in corpus:
        src_grams = ngram_set(src, max_src)
        hit = False
        tgt_grams = None
        for term in src_grams & by_source.keys():
            if tgt_grams is None:
                tgt_grams = ngram_set(tgt, max_tgt)
            if by_source[term] & tgt_grams:
                hit = True
                break
        if not hit:
            kept.append((src, tgt))
    return kept, len(corpus) - len(kept)


# --- configuration -------------------------------------------------------------------------

@dataclass
class TrainConfig:
    lr: float = 5e-4
    warmup: int = 4000
    warmup_init_lr: float = 1e-7
    lam: float = 0.2
    seed: int = 0
    class_weighting: str = "mean"
    copy_region: str = "all"
    max_constraints: int = 3
    constraint_k_distribution: tuple = K_DISTRIBUTION
    max_span: int = 3
    top_f: int = -1            # -1: rescale 1,500-of-32K to the vocabulary
    max_tokens: int = 4000
    epochs: int = 1
    clip_norm: float = 1.0
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.98
    use_constraints: bool = True
    log_interval: int = 50

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.class_weighting not in CLASS_WEIGHTINGS:
            raise ValueError(f"class_weighting must be one of {CLASS_WEIGHTINGS}")
        k = tuple(float(v) for v in self.constraint_k_distribution)
        if len(k) != self.max_constraints + 1:
            raise ValueError("constraint_k_distribution needs max_constraints + 1 entries")
        if not math.isclose(sum(k), 1.0, abs_tol=1e-9):
            raise ValueError("constraint_k_distribution must sum to 1")
        self.constraint_k_distribution = k


_ALIASES = {"λ": "lam", "lambda": "lam"}


def parse_config_text(text: str) -> dict:
    """Flat key=value lines; '#' starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key=value, got {line!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        out[_ALIASES.get(key, key)] = val
    return out


def _coerce(value: str, kind):
    if kind in (bool, "bool"):
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if kind in (tuple, "tuple"):
        return tuple(float(v) for v in value.strip("[]()").split(","))
    if kind in (int, "int"):
        return int(value)
    if kind in (float, "float"):
        return float(value)
    return value


def config_from_mapping(cls, raw: dict, strict: bool = True):
    known = {f.name: f.type for f in fields(cls)}
    kwargs = {}
    for key, val in raw.items():
        if key not in known:
            if strict:
                raise ValueError(f"unknown config key {key!r}")
            continue
        kwargs[key] = _coerce(val, known[key]) if isinstance(val, str) else val
    return cls(**kwargs)


def load_train_config(path) -> TrainConfig:
    raw = parse_config_text(Path(path).read_text(encoding="utf-8"))
    return config_from_mapping(TrainConfig, {k: v for k, v in raw.items()
                                             if k in {f.name for f in fields(TrainConfig)}})


# --- batching and the epoch loop -------------------------------------------------------------

@dataclass
class TrainingPair:
    x: list[int]
    y: list[int]
    spans: list[tuple[int, int]] = field(default_factory=list)
    x_hat: list[int] = field(default_factory=list)
    segments: list[int] = field(default_factory=list)
    supervision: CopySupervision | None = None


def make_training_pair(x: Sequence[int], y: Sequence[int], spans: Sequence[tuple[int, int]],
                       class_weighting: str = "mean", max_positions: int | None = None) -> TrainingPair:
    terms = [list(y[s:e + 1]) for s, e in spans]
    x_hat, seg = build_modified_source(x, terms, max_positions)
    sup = gold_copy_labels(len(y) + 1, spans, class_weighting)  # +1: the eos position
    return TrainingPair(list(x), list(y), list(spans), x_hat, seg, sup)


@dataclass
class Batch:
    x_hat: np.ndarray
    x_valid: np.ndarray
    y_in: np.ndarray
    y_out: np.ndarray
    supervision: list[CopySupervision]
    ctx: Tensor | None = None
    ctx_valid: np.ndarray | None = None

    @property
    def n_tokens(self) -> int:
        return int(sum(len(s.gold) for s in self.supervision))


def collate(pairs: Sequence[TrainingPair], context: ContextCache | None = None) -> Batch:
    b = len(pairs)
    sx = max(len(p.x_hat) for p in pairs)
    ty = max(len(p.y) for p in pairs) + 1
    x_hat = np.full((b, sx), Vocabulary.pad_id, dtype=np.int64)
    y_in = np.full((b, ty), Vocabulary.pad_id, dtype=np.int64)
    y_out = np.full((b, ty), Vocabulary.pad_id, dtype=np.int64)
    for i, p in enumerate(pairs):
        x_hat[i, : len(p.x_hat)] = p.x_hat
        y_in[i, : len(p.y) + 1] = [Vocabulary.bos_id] + p.y
        y_out[i, : len(p.y) + 1] = p.y + [Vocabulary.eos_id]
    ctx = ctx_valid = None
    if context is not None:
        ctx, ctx_valid = context.batch([p.x for p in pairs])
    return Batch(x_hat, x_hat != Vocabulary.pad_id, y_in, y_out, [p.supervision for p in pairs], ctx, ctx_valid)


def make_batches(pairs: Sequence[TrainingPair], max_tokens: int, rng: np.random.Generator) -> list[list[TrainingPair]]:
    """Length-bucketed batches under a padded-token budget, in shuffled order."""
    noise = rng.random(len(pairs))
    order = sorted(range(len(pairs)), key=lambda i: (len(pairs[i].x_hat) + len(pairs[i].y), noise[i]))
    batches, cur, width = [], [], 0
    for i in order:
        w = max(width, len(pairs[i].x_hat), len(pairs[i].y) + 1)
        if cur and w * (len(cur) + 1) > max_tokens:
            batches.append(cur)
            cur, w = [], max(len(pairs[i].x_hat), len(pairs[i].y) + 1)
        cur.append(pairs[i])
        width = w
    if cur:
        batches.append(cur)
    return [batches[i] for i in rng.permutation(len(batches))]


class Trainer:
    """Owns the optimizer state and schedule for one model."""

    def __init__(self, model: ConstrainedTransformer, vocab: Vocabulary, config: TrainConfig = TrainConfig(),
                 context: ContextCache | None = None):
        if model.config.use_fusion and context is None:
            raise ValueError("a fused model needs a context cache")
        self.model = model
        self.vocab = vocab
        self.config = config
        self.context = context if model.config.use_fusion else None
        self.params = model.parameters()
        self.state = nd.OptimizerState(learning_rate=config.lr, beta1=config.beta1, beta2=config.beta2,
                                       weight_decay=config.weight_decay, clip_norm=config.clip_norm)
        top_f = default_top_f(len(vocab)) if config.top_f < 0 else config.top_f
        self.exclude = vocab.top_frequent(top_f)
        self.epoch = 0

    def current_lr(self) -> float:
        return nd.inverse_sqrt_lr(self.state.step_count + 1, self.config.lr, self.config.warmup,
                                  self.config.warmup_init_lr)

    def make_pairs(self, corpus: Sequence[tuple[Sequence[int], Sequence[int]]],
                   rng: np.random.Generator) -> list[TrainingPair]:
        c = self.config
        sample = c.use_constraints and self.model.config.use_pointer
        pairs = []
        for x, y in corpus:
            spans = (sample_constraints(y, None, rng, k_distribution=c.constraint_k_distribution,
                                        max_span=c.max_span, exclude=self.exclude) if sample else [])
            pairs.append(make_training_pair(x, y, spans, c.class_weighting, self.model.config.max_positions))
        return pairs

    def batch_loss(self, batch: Batch):
        out, _, _ = self.model.forward(batch.x_hat, batch.y_in, batch.ctx, batch.ctx_valid, batch.x_valid)
        lam = self.config.lam if self.model.config.use_pointer else 0.0
        loss, nll, j = copy_supervised_loss(out.p_final, batch.y_out, out.g_copy, batch.supervision, lam,
                                            reduction="token_mean")
        return loss, nll, j, out

    def train_epoch(self, corpus: Sequence[tuple[Sequence[int], Sequence[int]]],
                    rng: np.random.Generator) -> dict:
        """One pass over ``corpus`` (token-id pairs) with fresh constraint samples."""
        self.model.train()
        pairs = self.make_pairs(corpus, rng)
        batches = make_batches(pairs, self.config.max_tokens, rng)
        totals = dict(loss=0.0, nll=0.0, j=0.0, tokens=0, sentences=0, g_hit=0, g_n=0,
                      g_copy_sum=0.0, n_copy=0, g_non_sum=0.0, n_non=0)
        intervals = []
        for idx, group in enumerate(batches):
            batch = collate(group, self.context)
            self.model.zero_grad()
            loss, nll, j, out = self.batch_loss(batch)
            if not np.isfinite(loss.data).all():
                raise TrainingError(f"non-finite loss at batch {idx} of epoch {self.epoch + 1}")
            nd.backward(loss)
            lr = self.current_lr()
            nd.adamw_step(self.params, self.state, lr)
            ntok = batch.n_tokens
            totals["loss"] += loss.item() * ntok
            totals["nll"] += nll.item() * ntok
            totals["j"] += j.item() * len(group)
            totals["tokens"] += ntok
            totals["sentences"] += len(group)
            self._gate_stats(out, batch, totals)
            if self.config.log_interval and (idx + 1) % self.config.log_interval == 0:
                intervals.append(self._summary(totals, lr))
                log.info("epoch %d batch %d: %s", self.epoch + 1, idx + 1, intervals[-1])
        self.epoch += 1
        metrics = self._summary(totals, self.current_lr())
        metrics["intervals"] = intervals
        metrics["epoch"] = self.epoch
        return metrics

    @staticmethod
    def _gate_stats(out, batch: Batch, totals: dict) -> None:
        g = out.g_copy.data
        for i, sup in enumerate(batch.supervision):
            gi = g[i, : len(sup.gold)]
            totals["g_hit"] += int(((gi >= 0.5) == (sup.gold > 0.5)).sum())
            totals["g_n"] += len(sup.gold)
            totals["g_copy_sum"] += float(gi[sup.gold > 0.5].sum())
            totals["n_copy"] += sup.n_copy
            totals["g_non_sum"] += float(gi[sup.gold < 0.5].sum())
            totals["n_non"] += sup.n_noncopy

    def _summary(self, t: dict, lr: float) -> dict:
        return {
            "loss": t["loss"] / max(t["tokens"], 1),
            "nll": t["nll"] / max(t["tokens"], 1),
            "J": t["j"] / max(t["sentences"], 1),
            "g_accuracy": t["g_hit"] / max(t["g_n"], 1),
            "mean_g_copy": t["g_copy_sum"] / max(t["n_copy"], 1),
            "mean_g_noncopy": t["g_non_sum"] / max(t["n_non"], 1),
            "lr": lr,
            "steps": self.state.step_count,
        }


def train_epoch(trainer: Trainer, corpus, rng: np.random.Generator) -> dict:
    return trainer.train_epoch(corpus, rng)
