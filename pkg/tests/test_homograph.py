"""Homograph pooling, feature vectors, the classifier and constraint decisions."""

import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lexcopy import ndgrad as nd
from lexcopy.evalkit import TestExample, run_benchmark
from lexcopy.fusion import ContextEncoder, ContextEncoderConfig
from lexcopy.homograph import (ClassifierConfig, HomographClassifier, HomographFilter, SplitLeakageError, Triplet,
                               build_feature_vector, check_disjoint, classify, decide_constraints, default_k,
                               featurize, fit_classifier, load_classifier, load_triplets, pool_homograph_embedding,
                               pool_layers, reference_vectors, save_classifier, save_triplets, split_by_homograph,
                               train_classifier)
from lexcopy.ndgrad import Tensor
from lexcopy.pipeline import Translator
from lexcopy.seq2seq import ConstrainedTransformer, ModelConfig
from lexcopy.synthetic import SyntheticWorld, gaussian_sense_features
from lexcopy.terms import LexicalConstraint


@pytest.fixture(scope="module")
def world():
    w = SyntheticWorld(seed=0)
    return w, w.vocabulary([])


@pytest.fixture(scope="module")
def encoder(world):
    _, vocab = world
    cfg = ContextEncoderConfig(num_layers=3, d_model=8, ffn_dim=16, num_heads=2, dropout=0.0)
    enc = ContextEncoder(len(vocab), cfg).eval()
    enc.freeze()
    return enc


class Rigged:
    """Classifier stand-in with a fixed score."""

    def __init__(self, value, threshold=0.5):
        self.value, self.threshold, self.k_layers = value, threshold, None

    def score(self, z):
        return self.value


def group_split(x, y, groups, test_words):
    test = np.isin(groups, test_words)
    return x[~test], y[~test], x[test], y[test]


class TestPooling:
    def test_single_token_last_layer(self):
        layers = [np.arange(6.0).reshape(3, 2), np.arange(6.0, 12.0).reshape(3, 2)]
        np.testing.assert_array_equal(pool_layers(layers, (1, 1), 1), layers[1][1])

    def test_identical_layers(self):
        a = np.random.default_rng(0).normal(size=(4, 3))
        np.testing.assert_array_equal(pool_layers([a, a.copy()], (0, 2), 2), a[0:3].mean(0))

    def test_mean_arithmetic(self):
        layers = [np.array([[1.0, 3.0]]), np.array([[3.0, 5.0]])]
        np.testing.assert_array_equal(pool_layers(layers, (0, 0), 2), [2.0, 4.0])

    def test_errors(self):
        layers = [np.zeros((3, 2))]
        with pytest.raises(ValueError):
            pool_layers(layers, (2, 1), 1)
        with pytest.raises(ValueError):
            pool_layers(layers, (0, 0), 2)
        with pytest.raises(ValueError):
            pool_layers(layers, (0, 3), 1)

    def test_default_k(self):
        assert [default_k(d) for d in (1, 2, 3, 6, 24)] == [1, 2, 2, 4, 16]

    def test_encoder_pooling_is_gradient_free(self, world, encoder):
        _, vocab = world
        ids = vocab.encode(["r00", "h1", "ul", "r02"])
        before = nd.op_count()
        vec = pool_homograph_embedding(ids, (1, 1), encoder, 2)
        layers = encoder.all_layers_one(ids)
        np.testing.assert_allclose(vec, (layers[1][1] + layers[2][1]) / 2, atol=1e-15)
        assert vec.shape == (8,)
        assert nd.op_count() == before


class TestFeatureVector:
    def test_identical_inputs(self):
        u = np.array([0.3, -1.2, 2.0])
        z = build_feature_vector(u, u, u)
        np.testing.assert_array_equal(z[9:18], 0.0)
        np.testing.assert_allclose(z[-3:], 1.0, atol=1e-15)

    def test_cosine_arithmetic(self):
        z = build_feature_vector([1, 0], [0, 1], [1, 0])
        assert len(z) == 15
        np.testing.assert_array_equal(z[6:8], [1, 1])
        np.testing.assert_allclose(z[-3:], [0.0, 0.0, 1.0], atol=1e-15)

    @pytest.mark.parametrize("m", [4, 8, 64])
    def test_width(self, m):
        rng = np.random.default_rng(m)
        assert build_feature_vector(*rng.normal(size=(3, m))).shape == (6 * m + 3,)

    def test_zero_norm_warns(self):
        with pytest.warns(RuntimeWarning):
            z = build_feature_vector([0, 0], [1, 0], [1, 0])
        np.testing.assert_array_equal(z[-3:], [0.0, 1.0, 0.0])

    def test_width_mismatch(self):
        with pytest.raises(ValueError):
            build_feature_vector([1, 0], [1, 0, 0], [1, 0])

    @settings(max_examples=100, deadline=None)
    @given(arrays(np.float64, (3, 5), elements=st.floats(-10, 10)).filter(
        lambda a: (np.linalg.norm(a, axis=1) > 1e-3).all()))
    def test_invariants(self, a):
        u, v, w = a
        z = build_feature_vector(u, v, w)
        zr = build_feature_vector(v, u, w)
        assert np.all(z[15:30] >= 0)
        assert np.all((z[-3:] >= -1) & (z[-3:] <= 1))
        np.testing.assert_array_equal(z[15:20], zr[15:20])
        assert z[-3] == zr[-3]

    def test_reference_conventions(self):
        a, b, c = np.array([1.0, 0]), np.array([0, 1.0]), np.array([2.0, 2.0])
        u, v = reference_vectors([a])
        assert u is a and v is a
        u, v = reference_vectors([a, b, c])
        np.testing.assert_array_equal(u, a)
        np.testing.assert_array_equal(v, [1.0, 1.5])
        with pytest.raises(ValueError):
            reference_vectors([])


class TestClassify:
    def _zeros(self, m=2):
        w = 6 * m + 3
        return Tensor(np.zeros((w, m))), Tensor(np.zeros(m)), Tensor(np.zeros((m, 1))), Tensor(np.zeros(1))

    def test_zero_weights(self):
        assert classify(np.ones(15), *self._zeros()).item() == 0.5

    def test_saturation(self):
        w_r, b_r, w, _ = self._zeros()
        assert classify(np.ones(15), w_r, b_r, w, Tensor([20.0])).item() == pytest.approx(1.0, abs=1e-8)

    def test_closed_form(self):
        w_r = np.zeros((9, 1))
        w_r[0, 0] = 1.0
        z = np.zeros(9)
        z[0] = 2.0
        o = classify(z, Tensor(w_r), Tensor([0.0]), Tensor([[1.0]]), Tensor([0.0])).item()
        assert o == pytest.approx(1 / (1 + math.exp(-2)), abs=1e-12)
        assert o == pytest.approx(0.8808, abs=1e-4)

    def test_shape_mismatch(self):
        with pytest.raises(nd.ShapeError):
            classify(np.ones(14), *self._zeros())
        w_r, b_r, _, b = self._zeros()
        with pytest.raises(nd.ShapeError):
            classify(np.ones(15), w_r, b_r, Tensor(np.zeros((3, 1))), b)

    def test_classifier_shapes(self):
        clf = HomographClassifier(4)
        assert clf.w_r.shape == (27, 4) and clf.w.shape == (4, 1)
        assert clf.predict(np.zeros((3, 27))).shape == (3,)

    @pytest.mark.parametrize("seed", range(10))
    def test_gradients(self, seed):
        clf = HomographClassifier(3, seed=seed)
        rng = np.random.default_rng(seed)
        z = Tensor(rng.normal(size=(4, 21)), requires_grad=True)
        assert nd.finite_diff_check(lambda: clf(z).sum(), [z] + clf.parameters()) < 1e-4


class TestTraining:
    def test_separable_gaussians(self):
        x, y, g = gaussian_sense_features(40, 60, 8, seed=0)
        xtr, ytr, xte, yte = group_split(x, y, g, np.arange(30, 40))
        clf = fit_classifier(xtr, ytr, ClassifierConfig(epochs=60))
        assert (clf.predict(xte) == yte).mean() >= 0.95

    def test_shuffled_labels_are_chance(self):
        x, y, g = gaussian_sense_features(40, 60, 8, seed=1, shuffle_labels=True)
        xtr, ytr, xte, yte = group_split(x, y, g, np.arange(24, 40))
        clf = fit_classifier(xtr, ytr, ClassifierConfig(epochs=60))
        assert abs((clf.predict(xte) == yte).mean() - 0.5) <= 0.05

    def test_deterministic(self):
        x, y, _ = gaussian_sense_features(6, 20, 4, seed=2)
        a = fit_classifier(x, y, ClassifierConfig(epochs=5, seed=3))
        b = fit_classifier(x, y, ClassifierConfig(epochs=5, seed=3))
        assert all(a.state_dict()[k].tobytes() == b.state_dict()[k].tobytes() for k in a.state_dict())

    def test_rejects_bad_width(self):
        with pytest.raises(ValueError):
            fit_classifier(np.zeros((4, 10)), [0, 1, 0, 1])

    def test_encoder_untouched(self, world, encoder):
        w, vocab = world
        before = {k: v.tobytes() for k, v in encoder.state_dict().items()}
        train = w.triplets("pseudo", 40, np.random.default_rng(0))
        clf, metrics = train_classifier(train, [], encoder, vocab, ClassifierConfig(epochs=3))
        assert {k: v.tobytes() for k, v in encoder.state_dict().items()} == before
        assert clf.k_layers == 2 and metrics["train"]["n"] == 40
        assert set(metrics["train"]["class_1"]) == {"precision", "recall", "f1", "support"}

    def test_leakage_is_a_hard_error(self, world, encoder):
        w, vocab = world
        train = w.triplets("pseudo", 20, np.random.default_rng(0))
        val = w.triplets("pseudo", 5, np.random.default_rng(1))
        with pytest.raises(SplitLeakageError):
            train_classifier(train, val, encoder, vocab, ClassifierConfig(epochs=1))

    def test_split_by_homograph_is_disjoint(self, world):
        w, _ = world
        parts = split_by_homograph(w.triplets("pseudo", 200, np.random.default_rng(0)))
        check_disjoint(*parts)
        assert sum(len(p) for p in parts) == 200
        leaked = [parts[0], parts[1] + parts[0][:1]]
        with pytest.raises(SplitLeakageError):
            check_disjoint(*leaked)


class TestTriplets:
    def test_validation(self):
        with pytest.raises(ValueError):
            Triplet("h1", ["a h1", "b c"], [(1, 1), (0, 0)], 1)
        with pytest.raises(ValueError):
            Triplet("h1", ["a h1", "h1"], [(1, 1), (1, 1)], 1)
        with pytest.raises(ValueError):
            Triplet("h1", ["a h1", "h1"], [(1, 1), (0, 0)], 2)

    def test_jsonl_round_trip(self, tmp_path, world):
        w, _ = world
        ts = w.triplets("homograph", 5, np.random.default_rng(0))
        save_triplets(ts, tmp_path / "t.jsonl")
        assert load_triplets(tmp_path / "t.jsonl") == ts

    def test_featurize_width(self, world, encoder):
        w, vocab = world
        t = w.triplets("homograph", 1, np.random.default_rng(0))[0]
        assert featurize(t, encoder, vocab).shape == (6 * 8 + 3,)


def benchmark_example(world, sense="a", span=True):
    w, _ = world
    h = w.homographs[0]
    rng = np.random.default_rng(4 if sense == "a" else 5)
    src, tgt, idx = w.sentence(rng, h.source, sense)
    refs = [w.sentence(rng, h.source, "a")[0] for _ in range(2)]
    return TestExample("x", src, tgt, LexicalConstraint(h.source, h.target_a),
                       "positive" if sense == "a" else "negative", refs, (idx, idx) if span else None)


class TestDecisions:
    def test_rigged_keep_and_drop(self, world, encoder):
        _, vocab = world
        ex = benchmark_example(world)
        assert decide_constraints(ex, Rigged(1.0), encoder, vocab)[0].reason == "keep"
        d = decide_constraints(ex, Rigged(0.0), encoder, vocab)[0]
        assert not d.keep and d.reason == "drop" and d.score == 0.0

    def test_no_match(self, world, encoder):
        _, vocab = world
        ex = benchmark_example(world, span=False)
        ex.source = [t for t in ex.source if t != "h0"]
        d = decide_constraints(ex, Rigged(1.0), encoder, vocab)[0]
        assert not d.keep and d.reason == "no-match"

    def test_fallback_surface_match(self, world, encoder):
        _, vocab = world
        with_span = decide_constraints(benchmark_example(world), HomographClassifier(8), encoder, vocab)[0]
        without = decide_constraints(benchmark_example(world, span=False), HomographClassifier(8), encoder, vocab)[0]
        assert with_span.score == without.score

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0, 1), st.floats(0, 1))
    def test_threshold_monotonicity(self, t1, t2):
        lo, hi = sorted((t1, t2))
        clf = HomographClassifier(8, seed=1)
        ex = BENCH_CACHE.setdefault("ex", None)
        if ex is None:
            return
        keep_hi = decide_constraints(ex, clf, BENCH_CACHE["enc"], BENCH_CACHE["vocab"], threshold=hi)[0].keep
        keep_lo = decide_constraints(ex, clf, BENCH_CACHE["enc"], BENCH_CACHE["vocab"], threshold=lo)[0].keep
        assert keep_lo or not keep_hi

    def test_rigged_drop_equals_unconstrained(self, world, encoder):
        w, vocab = world
        cfg = ModelConfig(num_layers=1, d_model=8, ffn_dim=16, num_heads=2, dropout=0.0, use_fusion=False)
        tr = Translator(ConstrainedTransformer(len(vocab), cfg).eval(), vocab)
        bench = w.homograph_benchmark(3, 3, np.random.default_rng(0))
        plain = [" ".join(h) for h in tr.translate_batch([e.source for e in bench])]
        dropped = run_benchmark(tr, bench, HomographFilter(Rigged(0.0), encoder, vocab), correction=True,
                                n_resamples=100)
        kept = run_benchmark(tr, bench, HomographFilter(Rigged(1.0), encoder, vocab), correction=True,
                             n_resamples=100)
        assert dropped["hypotheses"] == plain
        constrained = tr.translate_batch([e.source for e in bench], [[e.constraint] for e in bench])
        assert kept["hypotheses"] == [" ".join(h) for h in constrained]
        assert all(d["kept"] for d in kept["decisions"]) and not any(d["kept"] for d in dropped["decisions"])

    def test_checkpoint_round_trip(self, tmp_path):
        clf = HomographClassifier(4, seed=2, threshold=0.3, k_layers=2)
        save_classifier(clf, tmp_path / "clf.ckpt")
        back = load_classifier(tmp_path / "clf.ckpt")
        z = np.random.default_rng(0).normal(size=27)
        assert back.score(z) == clf.score(z)
        assert (back.threshold, back.k_layers) == (0.3, 2)


BENCH_CACHE: dict = {}


@pytest.fixture(autouse=True, scope="module")
def _bench_cache(world, encoder):
    BENCH_CACHE.update(ex=benchmark_example(world), enc=encoder, vocab=world[1])
    yield
    BENCH_CACHE.clear()
