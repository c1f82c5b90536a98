"""Command-line entry point: ``lexcopy train|translate|disambiguate|evaluate|filter-corpus``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .evalkit import format_report_table, load_benchmark, load_terminology, match_terminology, run_benchmark
from .fusion import ContextEncoderConfig, pretrain_context_encoder, ContextCache
from .homograph import (ClassifierConfig, HomographFilter, check_disjoint, decide_constraints, load_classifier,
                        load_triplets, save_classifier, train_classifier)
from .pipeline import Translator
from .seq2seq.model import ConstrainedTransformer, ModelConfig
from .seq2seq.vocab import Vocabulary, read_corpus, write_corpus
from .train import TrainConfig, Trainer, config_from_mapping, filter_training_data, parse_config_text

log = logging.getLogger("lexcopy")

EXIT_OK, EXIT_INVALID = 0, 2


def _split_config(raw: dict) -> tuple[TrainConfig, ModelConfig, ContextEncoderConfig]:
    """One flat file feeds three configs: plain keys go to training or the model,
    ``plm_``-prefixed keys go to the context encoder."""
    train_keys = {f.name for f in fields(TrainConfig)}
    model_keys = {f.name for f in fields(ModelConfig)}
    plm_keys = {f.name for f in fields(ContextEncoderConfig)}
    t, m, p = {}, {}, {}
    for key, val in raw.items():
        if key.startswith("plm_") and key[4:] in plm_keys:
            p[key[4:]] = val
        elif key in train_keys:
            t[key] = val
        elif key in model_keys:
            m[key] = val
        else:
            raise ValueError(f"unknown config key {key!r}")
    if "copy_region" in t:
        m["copy_region"] = t["copy_region"]
    return (config_from_mapping(TrainConfig, t), config_from_mapping(ModelConfig, m),
            config_from_mapping(ContextEncoderConfig, p))


def _read_lines(path) -> list[list[str]]:
    text = sys.stdin.read() if path in (None, "-") else Path(path).read_text(encoding="utf-8")
    return [line.split() for line in text.splitlines()]


def cmd_train(args) -> int:
    raw = parse_config_text(Path(args.config).read_text(encoding="utf-8")) if args.config else {}
    if args.seed is not None:
        raw["seed"] = str(args.seed)
    tcfg, mcfg, pcfg = _split_config(raw)
    mcfg.seed = tcfg.seed
    pcfg.seed = tcfg.seed
    corpus = read_corpus(args.src, args.tgt)
    if not corpus:
        raise ValueError("training corpus is empty")
    kept = corpus
    if args.test_terminology:
        kept, removed = filter_training_data(corpus, load_terminology(args.test_terminology))
        log.info("filtered %d of %d training pairs", removed, len(corpus))
    vocab = Vocabulary.build([s for s, _ in kept] + [t for _, t in kept],
                             extra=[tok for s, t in corpus for tok in s + t])
    encoder = None
    if mcfg.use_fusion:
        mcfg.d_plm = pcfg.d_model
        encoder = pretrain_context_encoder([vocab.encode(s) for s, _ in corpus], len(vocab), pcfg, log.info)
    model = ConstrainedTransformer(len(vocab), mcfg)
    trainer = Trainer(model, vocab, tcfg, ContextCache(encoder) if encoder else None)
    data = [(vocab.encode(s), vocab.encode(t)) for s, t in kept]
    rng = np.random.default_rng(tcfg.seed)
    for _ in range(tcfg.epochs):
        metrics = trainer.train_epoch(data, rng)
        metrics.pop("intervals")
        print(json.dumps(metrics))
    Translator(model, vocab, encoder).save(args.out)
    return EXIT_OK


def cmd_translate(args) -> int:
    tr = Translator.load(args.model, beam_size=args.beam)
    sources = _read_lines(args.input)
    terminology = load_terminology(args.terminology) if args.terminology else []
    constraints = [match_terminology(s, terminology) for s in sources]
    for hyp in tr.translate_batch(sources, constraints):
        print(" ".join(hyp))
    return EXIT_OK


def cmd_disambiguate(args) -> int:
    tr = Translator.load(args.model)
    if tr.context_encoder is None:
        raise ValueError("the model has no context encoder to pool homograph embeddings from")
    if args.triplets:
        train = load_triplets(args.triplets)
        val = load_triplets(args.val) if args.val else []
        check_disjoint(train, val)
        cfg = ClassifierConfig(seed=args.seed or 0, threshold=args.threshold)
        clf, metrics = train_classifier(train, val, tr.context_encoder, tr.vocab, cfg)
        if args.classifier:
            save_classifier(clf, args.classifier)
        print(json.dumps(metrics, indent=2))
        return EXIT_OK
    if not (args.benchmark and args.classifier):
        raise ValueError("give --triplets to train, or --benchmark with --classifier to decide")
    clf = load_classifier(args.classifier)
    for ex in load_benchmark(args.benchmark):
        for d in decide_constraints(ex, clf, tr.context_encoder, tr.vocab, threshold=args.threshold):
            print(json.dumps({"id": ex.id, "constraint": d.constraint.to_dict(), "keep": d.keep,
                              "score": d.score, "reason": d.reason}))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    tr = Translator.load(args.model, beam_size=args.beam)
    examples = load_benchmark(args.benchmark)
    clf = None
    if args.correction:
        if not args.classifier:
            raise ValueError("--correction needs --classifier")
        clf = HomographFilter(load_classifier(args.classifier), tr.context_encoder, tr.vocab)
    report = run_benchmark(tr, examples, clf, args.correction, seed=args.seed or 0)
    report["matching"] = args.matching
    report["csr"] = report["csr_soft"] if args.matching == "soft" else report["csr_hard"]
    if args.report:
        Path(args.report).write_text(json.dumps(report, indent=2), encoding="utf-8")
    name = "w/ correction" if args.correction else "w/o correction"
    print(format_report_table({name: report}))
    return EXIT_OK


def cmd_filter(args) -> int:
    corpus = read_corpus(args.src, args.tgt)
    kept, removed = filter_training_data(corpus, load_terminology(args.terminology))
    write_corpus(kept, args.out_src, args.out_tgt)
    print(json.dumps({"input": len(corpus), "kept": len(kept), "removed": removed}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lexcopy", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="pretrain the context encoder and train a translator")
    t.add_argument("--src", required=True)
    t.add_argument("--tgt", required=True)
    t.add_argument("--out", required=True, help="output directory for the translator bundle")
    t.add_argument("--config")
    t.add_argument("--seed", type=int)
    t.add_argument("--test-terminology", help="TSV of test constraints to filter out of training")
    t.set_defaults(func=cmd_train)

    tr = sub.add_parser("translate", help="translate sentences, applying matched terminology")
    tr.add_argument("--model", required=True)
    tr.add_argument("--input", default="-")
    tr.add_argument("--terminology")
    tr.add_argument("--beam", type=int, default=1)
    tr.set_defaults(func=cmd_translate)

    d = sub.add_parser("disambiguate", help="train the homograph classifier or apply it to a benchmark")
    d.add_argument("--model", required=True)
    d.add_argument("--triplets")
    d.add_argument("--val")
    d.add_argument("--benchmark")
    d.add_argument("--classifier", help="classifier checkpoint to write (training) or read")
    d.add_argument("--threshold", type=float, default=0.5)
    d.add_argument("--seed", type=int)
    d.set_defaults(func=cmd_disambiguate)

    e = sub.add_parser("evaluate", help="score a benchmark: BLEU and copy success rate")
    e.add_argument("--model", required=True)
    e.add_argument("--benchmark", required=True)
    e.add_argument("--classifier")
    e.add_argument("--correction", action="store_true")
    e.add_argument("--matching", choices=("soft", "hard"), default="soft")
    e.add_argument("--beam", type=int, default=1)
    e.add_argument("--report")
    e.add_argument("--seed", type=int)
    e.set_defaults(func=cmd_evaluate)

    f = sub.add_parser("filter-corpus", help="drop pairs containing test constraints on both sides")
    f.add_argument("--src", required=True)
    f.add_argument("--tgt", required=True)
    f.add_argument("--terminology", required=True)
    f.add_argument("--out-src", required=True)
    f.add_argument("--out-tgt", required=True)
    f.set_defaults(func=cmd_filter)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, KeyError, FileNotFoundError) as err:
        print(f"lexcopy: error: {err}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
