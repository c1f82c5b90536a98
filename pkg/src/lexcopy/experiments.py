"""Desk-scale experiments on the synthetic world.

``copy_experiment`` trains the copy-supervised model, the same model without
gate supervision and a vanilla transformer, then measures copy success on
held-out and seen constraints. ``correction_experiment`` trains the homograph
classifier on stand-in homographs and measures what dropping rejected
constraints does on a homograph benchmark.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .evalkit import csr, run_benchmark
from .fusion import ContextCache, ContextEncoder, ContextEncoderConfig, masked_token_accuracy, pretrain_context_encoder
from .homograph import (ClassifierConfig, HomographFilter, binary_metrics, featurize, split_by_homograph,
                        train_classifier)
from .pipeline import Translator
from .seq2seq.model import ConstrainedTransformer, ModelConfig
from .seq2seq.vocab import Vocabulary
from .synthetic import SyntheticWorld, encode_corpus
from .train import TrainConfig, Trainer

log = logging.getLogger(__name__)

VARIANTS = ("copy", "vanilla")


@dataclass
class ExperimentConfig:
    world_seed: int = 0
    min_pairs: int = 5000
    plm: ContextEncoderConfig = field(default_factory=lambda: ContextEncoderConfig(
        d_model=48, ffn_dim=96, num_heads=4, epochs=3))
    d_model: int = 48
    ffn_dim: int = 96
    num_heads: int = 4
    num_layers: int = 2
    dropout: float = 0.1
    copy_region: str = "constraints_only"
    epochs: int = 16
    lr: float = 2e-3
    warmup: int = 200
    max_tokens: int = 400
    top_f: int = 50
    seed: int = 0
    n_unseen: int = 500
    n_seen: int = 200
    n_triplets_train: int = 1000
    n_triplets_val: int = 200
    n_triplets_test: int = 400
    n_positive: int = 50
    n_negative: int = 50


@dataclass
class Setup:
    world: SyntheticWorld
    vocab: Vocabulary
    kept: list
    removed: int
    full: list
    encoder: ContextEncoder
    data: list
    plm_accuracy: float


def prepare(config: ExperimentConfig = ExperimentConfig()) -> Setup:
    """Build the world and corpus, then pretrain and freeze the context encoder
    on the source side of the unfiltered corpus."""
    world = SyntheticWorld(config.world_seed)
    kept, removed, full = world.training_corpus(config.min_pairs)
    vocab = world.vocabulary(kept)
    sources = [vocab.encode(s) for s, _ in full]
    t0 = time.perf_counter()
    encoder = pretrain_context_encoder(sources, len(vocab), config.plm, log.info)
    acc = masked_token_accuracy(encoder, sources[:500])
    log.info("context encoder ready in %.1fs, masked accuracy %.3f", time.perf_counter() - t0, acc)
    return Setup(world, vocab, kept, removed, full, encoder, encode_corpus(vocab, kept), acc)


def model_config(config: ExperimentConfig, variant: str) -> ModelConfig:
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    full = variant == "copy"
    return ModelConfig(num_layers=config.num_layers, d_model=config.d_model, ffn_dim=config.ffn_dim,
                       num_heads=config.num_heads, dropout=config.dropout, use_fusion=full, use_pointer=full,
                       use_segment_embeddings=full, d_plm=config.plm.d_model, copy_region=config.copy_region,
                       seed=config.seed)


def train_translator(setup: Setup, config: ExperimentConfig, variant: str = "copy", lam: float = 0.2,
                     epochs: int | None = None) -> tuple[Translator, list[dict]]:
    model = ConstrainedTransformer(len(setup.vocab), model_config(config, variant))
    fused = model.config.use_fusion
    tcfg = TrainConfig(lr=config.lr, warmup=config.warmup, max_tokens=config.max_tokens, lam=lam,
                       top_f=config.top_f, seed=config.seed, log_interval=0)
    trainer = Trainer(model, setup.vocab, tcfg, ContextCache(setup.encoder) if fused else None)
    rng = np.random.default_rng(config.seed)
    history = []
    for _ in range(config.epochs if epochs is None else epochs):
        t0 = time.perf_counter()
        metrics = trainer.train_epoch(setup.data, rng)
        metrics.pop("intervals")
        metrics["seconds"] = time.perf_counter() - t0
        log.info("%s lam=%g epoch %d: %s", variant, lam, metrics["epoch"], metrics)
        history.append(metrics)
    model.eval()
    return Translator(model, setup.vocab, setup.encoder if fused else None), history


def constraint_sets(setup: Setup, config: ExperimentConfig):
    unseen = setup.world.constraint_test_set("unseen", config.n_unseen, np.random.default_rng(config.seed + 5))
    seen = setup.world.constraint_test_set("seen", config.n_seen, np.random.default_rng(config.seed + 6))
    return unseen, seen


def constraint_csr(translator: Translator, examples, mode: str = "hard") -> float:
    hyps = translator.translate_batch([e.source for e in examples], [[e.constraint] for e in examples])
    return csr(hyps, examples, mode)


def copy_experiment(setup: Setup, config: ExperimentConfig = ExperimentConfig()) -> dict:
    """Hard-match CSR on unseen and seen constraints for the three systems.

    The returned dict also carries the trained λ=0.2 translator under
    ``"translator"`` so the correction experiment can reuse it.
    """
    unseen, seen = constraint_sets(setup, config)
    results = {}
    runs = {"lam_0.2": ("copy", 0.2), "lam_0": ("copy", 0.0), "vanilla": ("vanilla", 0.0)}
    for name, (variant, lam) in runs.items():
        t0 = time.perf_counter()
        tr, history = train_translator(setup, config, variant, lam)
        results[name] = {"unseen_csr": constraint_csr(tr, unseen), "seen_csr": constraint_csr(tr, seen),
                         "history": history, "seconds": time.perf_counter() - t0}
        if name == "lam_0.2":
            results["translator"] = tr
    return results


def correction_experiment(setup: Setup, translator: Translator,
                          config: ExperimentConfig = ExperimentConfig()) -> dict:
    """Train the classifier on stand-in homographs, test it on the benchmark
    homographs, then run the homograph benchmark with and without correction."""
    world = setup.world
    # Validation words must not occur in training, so split the stand-ins by word.
    pool = world.triplets("pseudo", config.n_triplets_train + config.n_triplets_val,
                          np.random.default_rng(config.seed + 11))
    train, val, _ = split_by_homograph(pool, (config.n_triplets_train, config.n_triplets_val, 0), seed=config.seed)
    test = world.triplets("homograph", config.n_triplets_test, np.random.default_rng(config.seed + 13))
    clf, metrics = train_classifier(train, val, setup.encoder, setup.vocab, ClassifierConfig(seed=config.seed))
    x = np.stack([featurize(t, setup.encoder, setup.vocab, clf.k_layers) for t in test])
    metrics["homograph"] = binary_metrics([t.label for t in test], clf.predict(x))

    bench = world.homograph_benchmark(config.n_positive, config.n_negative, np.random.default_rng(config.seed + 14))
    flt = HomographFilter(clf, setup.encoder, setup.vocab)
    without = run_benchmark(translator, bench, seed=config.seed)
    with_corr = run_benchmark(translator, bench, flt, correction=True,
                              baseline_hypotheses=without["hypotheses"], seed=config.seed)
    return {"classifier": metrics, "without": without, "with": with_corr, "classifier_model": clf}
