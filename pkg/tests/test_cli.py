"""End-to-end runs of the command-line subcommands on a tiny synthetic corpus."""

import json

import numpy as np
import pytest

from lexcopy.cli import EXIT_INVALID, EXIT_OK, main
from lexcopy.evalkit import save_benchmark, save_terminology
from lexcopy.homograph import save_triplets, split_by_homograph
from lexcopy.seq2seq.vocab import read_corpus, write_corpus
from lexcopy.synthetic import SyntheticWorld

TINY = """# tiny run
epochs = 1
lr = 1e-3
warmup = 10
max_tokens = 300
top_f = 20
d_model = 16
ffn_dim = 32
num_heads = 2
num_layers = 1
plm_d_model = 16
plm_ffn_dim = 32
plm_num_heads = 2
plm_epochs = 1
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    world = SyntheticWorld(0)
    pairs = world.full_corpus(200, np.random.default_rng(0))
    write_corpus(pairs, d / "train.src", d / "train.tgt")
    save_terminology(world.held_out_constraints(), d / "test.tsv")
    (d / "tiny.cfg").write_text(TINY, encoding="utf-8")
    save_benchmark(world.homograph_benchmark(6, 6, np.random.default_rng(1)), d / "bench.jsonl")
    train, val, _ = split_by_homograph(world.triplets("pseudo", 60, np.random.default_rng(2)), (0.7, 0.3, 0.0))
    save_triplets(train, d / "train.jsonl")
    save_triplets(val, d / "val.jsonl")
    code = main(["train", "--src", str(d / "train.src"), "--tgt", str(d / "train.tgt"), "--out", str(d / "model"),
                 "--config", str(d / "tiny.cfg"), "--test-terminology", str(d / "test.tsv")])
    assert code == EXIT_OK
    return d


class TestTrain:
    def test_bundle_written(self, workdir):
        for name in ("model.ckpt", "vocab.txt", "translator.json"):
            assert (workdir / "model" / name).exists()

    def test_unknown_config_key(self, workdir, tmp_path, capsys):
        (tmp_path / "bad.cfg").write_text("nonsense = 1\n", encoding="utf-8")
        code = main(["train", "--src", str(workdir / "train.src"), "--tgt", str(workdir / "train.tgt"),
                     "--out", str(tmp_path / "m"), "--config", str(tmp_path / "bad.cfg")])
        assert code == EXIT_INVALID
        assert "nonsense" in capsys.readouterr().err

    def test_missing_corpus(self, tmp_path):
        code = main(["train", "--src", str(tmp_path / "none.src"), "--tgt", str(tmp_path / "none.tgt"),
                     "--out", str(tmp_path / "m")])
        assert code == EXIT_INVALID


class TestTranslate:
    def test_one_line_per_input(self, workdir, capsys):
        (workdir / "in.txt").write_text("r01 n00 ul r02\nr03 r04\n", encoding="utf-8")
        capsys.readouterr()
        code = main(["translate", "--model", str(workdir / "model"), "--input", str(workdir / "in.txt"),
                     "--terminology", str(workdir / "test.tsv")])
        assert code == EXIT_OK
        assert len(capsys.readouterr().out.splitlines()) == 2

    def test_missing_model(self, tmp_path):
        assert main(["translate", "--model", str(tmp_path / "none"), "--input", "-"]) == EXIT_INVALID


class TestFilterCorpus:
    def test_counts(self, workdir, capsys):
        capsys.readouterr()
        code = main(["filter-corpus", "--src", str(workdir / "train.src"), "--tgt", str(workdir / "train.tgt"),
                     "--terminology", str(workdir / "test.tsv"), "--out-src", str(workdir / "f.src"),
                     "--out-tgt", str(workdir / "f.tgt")])
        assert code == EXIT_OK
        stats = json.loads(capsys.readouterr().out)
        assert stats["input"] == 200 and stats["kept"] + stats["removed"] == 200
        assert len(read_corpus(workdir / "f.src", workdir / "f.tgt")) == stats["kept"]


@pytest.fixture(scope="module")
def classifier(workdir):
    path = workdir / "clf.ckpt"
    code = main(["disambiguate", "--model", str(workdir / "model"), "--triplets", str(workdir / "train.jsonl"),
                 "--val", str(workdir / "val.jsonl"), "--classifier", str(path)])
    assert code == EXIT_OK
    return path


class TestDisambiguateAndEvaluate:
    def test_decisions(self, workdir, classifier, capsys):
        capsys.readouterr()
        code = main(["disambiguate", "--model", str(workdir / "model"), "--benchmark", str(workdir / "bench.jsonl"),
                     "--classifier", str(classifier)])
        assert code == EXIT_OK
        rows = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
        assert len(rows) == 12 and all(isinstance(r["keep"], bool) for r in rows)

    def test_leaking_splits(self, workdir):
        code = main(["disambiguate", "--model", str(workdir / "model"), "--triplets", str(workdir / "train.jsonl"),
                     "--val", str(workdir / "train.jsonl")])
        assert code == EXIT_INVALID

    def test_evaluate_with_correction(self, workdir, classifier, capsys):
        report = workdir / "report.json"
        code = main(["evaluate", "--model", str(workdir / "model"), "--benchmark", str(workdir / "bench.jsonl"),
                     "--classifier", str(classifier), "--correction", "--matching", "hard",
                     "--report", str(report)])
        assert code == EXIT_OK
        data = json.loads(report.read_text(encoding="utf-8"))
        assert data["n_examples"] == 12 and data["csr"] == data["csr_hard"]
        assert "w/ correction" in capsys.readouterr().out

    def test_correction_needs_classifier(self, workdir):
        code = main(["evaluate", "--model", str(workdir / "model"), "--benchmark", str(workdir / "bench.jsonl"),
                     "--correction"])
        assert code == EXIT_INVALID
