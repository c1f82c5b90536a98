"""Frozen context encoder and the fused encoder/decoder layers."""

import numpy as np
import pytest

from lexcopy import ndgrad as nd
from lexcopy.fusion import (ContextCache, ContextEncoder, ContextEncoderConfig, FusedDecoderLayer, FusedEncoderLayer,
                            masked_token_accuracy, pretrain_context_encoder)
from lexcopy.ndgrad import Tensor
from lexcopy.seq2seq import ConstrainedTransformer, ModelConfig
from lexcopy.seq2seq.layers import causal_mask, key_padding_mask
from lexcopy.synthetic import SyntheticWorld, encode_corpus
from lexcopy.train import TrainConfig, Trainer

SMALL_PLM = ContextEncoderConfig(num_layers=2, d_model=16, ffn_dim=32, num_heads=2, epochs=2, lr=3e-3,
                                 warmup=20, dropout=0.0)


@pytest.fixture(scope="module")
def world_data():
    world = SyntheticWorld(seed=0)
    rng = np.random.default_rng(0)
    corpus = world.full_corpus(600, rng)
    vocab = world.vocabulary(corpus)
    return world, vocab, encode_corpus(vocab, corpus)


@pytest.fixture(scope="module")
def encoder(world_data):
    _, vocab, data = world_data
    return pretrain_context_encoder([s for s, _ in data[:500]], len(vocab), SMALL_PLM)


def np_layer_norm(x, ln, eps=1e-5):
    mu = x.mean(-1, keepdims=True)
    var = ((x - mu) ** 2).mean(-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * ln.gain.data + ln.bias.data


def np_attention(mha, q, kv, allowed=None):
    """Reference multi-head attention for a single sequence ([T, d], [S, d])."""
    h, dk = mha.num_heads, mha.head_dim
    outs = []
    for i in range(h):
        sl = slice(i * dk, (i + 1) * dk)
        scores = (q @ mha.w_q.data[:, sl]) @ (kv @ mha.w_k.data[:, sl]).T / np.sqrt(dk)
        if allowed is not None:
            scores = np.where(allowed, scores, -np.inf)
        w = np.exp(scores - scores.max(-1, keepdims=True))
        w /= w.sum(-1, keepdims=True)
        outs.append(w @ (kv @ mha.w_v.data[:, sl]))
    return np.concatenate(outs, -1) @ mha.w_o.data


def np_ffn(ffn, x):
    return np.maximum(x @ ffn.w1.data + ffn.b1.data, 0) @ ffn.w2.data + ffn.b2.data


class TestContextEncoder:
    def test_beats_chance_on_held_out_text(self, world_data, encoder):
        _, vocab, data = world_data
        acc = masked_token_accuracy(encoder, [s for s, _ in data[500:]])
        assert acc > 1.0 / len(vocab)

    def test_frozen_flags(self, encoder):
        assert encoder.frozen and not encoder.training
        assert all(not p.requires_grad for p in encoder.parameters())
        assert all(name.startswith("plm.") for name in encoder.state_dict())

    def test_identical_sentence_identical_b(self, encoder):
        a = encoder.represent_one([5, 6, 7, 8])
        b = encoder.represent_one([5, 6, 7, 8])
        assert a.tobytes() == b.tobytes()
        assert a.shape == (4, 16)

    def test_cache_matches_direct(self, encoder):
        cache = ContextCache(encoder)
        batch, valid = cache.batch([[5, 6, 7], [8, 9]])
        np.testing.assert_array_equal(batch.data[1, :2], encoder.represent_one([8, 9]))
        np.testing.assert_array_equal(valid, [[True, True, True], [True, True, False]])

    def test_empty_corpus(self):
        with pytest.raises(ValueError):
            pretrain_context_encoder([], 10, SMALL_PLM)

    def test_training_epoch_leaves_encoder_untouched(self, world_data, encoder):
        world, vocab, data = world_data
        before = {k: v.tobytes() for k, v in encoder.state_dict().items()}
        probe = encoder.represent_one(data[0][0]).tobytes()
        cfg = ModelConfig(num_layers=1, d_model=16, ffn_dim=32, num_heads=2, dropout=0.0, use_fusion=True,
                          d_plm=16)
        model = ConstrainedTransformer(len(vocab), cfg)
        trainer = Trainer(model, vocab, TrainConfig(warmup=10, max_tokens=400, log_interval=5),
                          ContextCache(encoder))
        trainer.train_epoch(data[:120], np.random.default_rng(0))
        assert {k: v.tobytes() for k, v in encoder.state_dict().items()} == before
        assert encoder.represent_one(data[0][0]).tobytes() == probe

    def test_checkpoint_round_trip(self, encoder, tmp_path):
        nd.save_checkpoint(tmp_path / "plm.ckpt", encoder.state_dict())
        other = ContextEncoder(len(encoder.embed.data), SMALL_PLM)
        other.load_state_dict(nd.load_checkpoint(tmp_path / "plm.ckpt"))
        assert other.represent_one([5, 6]).tobytes() == encoder.represent_one([5, 6]).tobytes()


class TestFusedEncoderLayer:
    def _pair(self, d=4, d_plm=None):
        plain = FusedEncoderLayer("enc.0", 3, d, 2 * d, 2)
        fused = FusedEncoderLayer("enc.0", 3, d, 2 * d, 2, d_plm or d)
        return plain, fused

    def test_shared_weights_identical(self):
        plain, fused = self._pair()
        p, f = dict(plain.named_parameters()), dict(fused.named_parameters())
        assert all(p[k].data.tobytes() == f[k].data.tobytes() for k in p)

    def test_equal_branches_reduce_to_plain_layer(self):
        plain, fused = self._pair()
        for name in ("w_q", "w_k", "w_v", "w_o"):
            getattr(fused.plm_attn, name).data = getattr(fused.self_attn, name).data.copy()
        h = Tensor(np.random.default_rng(0).normal(size=(1, 3, 4)))
        mask = key_padding_mask(np.ones((1, 3), bool))
        np.testing.assert_allclose(fused(h, mask, h, mask).data, plain(h, mask).data, atol=1e-12)

    def test_zeroed_branch_halves_attention(self):
        _, fused = self._pair(d_plm=6)
        for name in ("w_q", "w_k", "w_v", "w_o"):
            getattr(fused.plm_attn, name).data[:] = 0.0
        rng = np.random.default_rng(1)
        h = rng.normal(size=(2, 4))
        b = rng.normal(size=(3, 6))
        out = fused(Tensor(h[None]), None, Tensor(b[None]), None).data[0]
        h_tilde = 0.5 * np_attention(fused.self_attn, h, h) + h
        expected = np_layer_norm(np_ffn(fused.ffn, np_layer_norm(h_tilde, fused.ln_ffn)) + h_tilde, fused.ln_out)
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_reference_evaluation(self):
        _, fused = self._pair(d_plm=6)
        rng = np.random.default_rng(2)
        h, b = rng.normal(size=(3, 4)), rng.normal(size=(5, 6))
        out = fused(Tensor(h[None]), None, Tensor(b[None]), None).data[0]
        h_tilde = 0.5 * (np_attention(fused.self_attn, h, h) + np_attention(fused.plm_attn, h, b)) + h
        expected = np_layer_norm(np_ffn(fused.ffn, np_layer_norm(h_tilde, fused.ln_ffn)) + h_tilde, fused.ln_out)
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_query_projection_uses_model_width(self):
        _, fused = self._pair(d=4, d_plm=6)
        assert fused.plm_attn.w_q.shape == (4, 4)
        assert fused.plm_attn.w_k.shape == (6, 4) and fused.plm_attn.w_v.shape == (6, 4)

    def test_empty_context(self):
        _, fused = self._pair()
        h = Tensor(np.zeros((1, 2, 4)))
        with pytest.raises(ValueError, match="length zero"):
            fused(h, None, Tensor(np.zeros((1, 0, 4))), None)
        with pytest.raises(ValueError):
            fused(h, None, None, None)

    @pytest.mark.parametrize("seed", range(10))
    def test_gradients(self, seed):
        layer = FusedEncoderLayer("enc.0", seed, 4, 8, 2, 6)
        rng = np.random.default_rng(seed)
        h = Tensor(rng.normal(size=(1, 3, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=(1, 4, 6)))
        probe = rng.normal(size=(1, 3, 4))
        err = nd.finite_diff_check(lambda: (layer(h, None, b, None) * probe).sum(), [h] + layer.parameters())
        assert err < 1e-4

    @pytest.mark.parametrize("seed", range(10))
    def test_branch_projection_gradients(self, seed):
        layer = FusedEncoderLayer("enc.0", seed, 4, 8, 2, 6)
        rng = np.random.default_rng(100 + seed)
        h = Tensor(rng.normal(size=(1, 2, 4)))
        b = Tensor(rng.normal(size=(1, 3, 6)))
        probe = rng.normal(size=(1, 2, 4))
        err = nd.finite_diff_check(lambda: (layer(h, None, b, None) * probe).sum(), layer.plm_attn.parameters())
        assert err < 1e-4


class TestFusedDecoderLayer:
    def test_equal_branches_reduce_to_plain_layer(self):
        plain = FusedDecoderLayer("dec.0", 5, 4, 8, 2)
        fused = FusedDecoderLayer("dec.0", 5, 4, 8, 2, 4)
        for name in ("w_q", "w_k", "w_v", "w_o"):
            getattr(fused.plm_attn, name).data = getattr(fused.cross_attn, name).data.copy()
        rng = np.random.default_rng(0)
        s = Tensor(rng.normal(size=(1, 3, 4)))
        enc = Tensor(rng.normal(size=(1, 5, 4)))
        a, wa = fused(s, causal_mask(3), enc, None, enc, None)
        b, wb = plain(s, causal_mask(3), enc, None)
        np.testing.assert_allclose(a.data, b.data, atol=1e-12)
        np.testing.assert_allclose(wa.data, wb.data, atol=1e-15)

    def test_reference_evaluation(self):
        layer = FusedDecoderLayer("dec.0", 6, 4, 8, 2, 6)
        rng = np.random.default_rng(1)
        s, enc, b = rng.normal(size=(3, 4)), rng.normal(size=(5, 4)), rng.normal(size=(2, 6))
        out, _ = layer(Tensor(s[None]), causal_mask(3), Tensor(enc[None]), None, Tensor(b[None]), None)
        s_hat = np_layer_norm(np_attention(layer.self_attn, s, s, causal_mask(3)), layer.ln_self) + s
        s_tilde = 0.5 * (np_attention(layer.cross_attn, s_hat, enc) + np_attention(layer.plm_attn, s_hat, b)) + s_hat
        expected = np_layer_norm(np_ffn(layer.ffn, np_layer_norm(s_tilde, layer.ln_ffn)) + s_tilde, layer.ln_out)
        np.testing.assert_allclose(out.data[0], expected, atol=1e-12)

    def test_causality(self):
        layer = FusedDecoderLayer("dec.0", 7, 4, 8, 2, 6)
        rng = np.random.default_rng(2)
        s = rng.normal(size=(1, 4, 4))
        changed = s.copy()
        changed[0, 2:] += 3.0
        enc, b = Tensor(rng.normal(size=(1, 3, 4))), Tensor(rng.normal(size=(1, 2, 6)))
        a, _ = layer(Tensor(s), causal_mask(4), enc, None, b, None)
        c, _ = layer(Tensor(changed), causal_mask(4), enc, None, b, None)
        assert a.data[0, :2].tobytes() == c.data[0, :2].tobytes()

    def test_pointer_weights_normalised(self):
        layer = FusedDecoderLayer("dec.0", 8, 4, 8, 2, 6)
        rng = np.random.default_rng(3)
        enc_valid = np.array([[True, True, True, False]])
        _, w = layer(Tensor(rng.normal(size=(1, 3, 4))), causal_mask(3), Tensor(rng.normal(size=(1, 4, 4))),
                     key_padding_mask(enc_valid), Tensor(rng.normal(size=(1, 2, 6))), None)
        np.testing.assert_allclose(w.data.mean(axis=1).sum(-1), 1.0, atol=1e-9)

    def test_missing_encoder_states(self):
        layer = FusedDecoderLayer("dec.0", 8, 4, 8, 2)
        with pytest.raises(ValueError, match="encoder states"):
            layer(Tensor(np.zeros((1, 1, 4))), causal_mask(1), None, None)

    @pytest.mark.parametrize("seed", range(10))
    def test_gradients(self, seed):
        layer = FusedDecoderLayer("dec.0", seed, 4, 8, 2, 6)
        rng = np.random.default_rng(seed)
        s = Tensor(rng.normal(size=(1, 3, 4)), requires_grad=True)
        enc = Tensor(rng.normal(size=(1, 3, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=(1, 2, 6)))
        probe = rng.normal(size=(1, 3, 4))
        err = nd.finite_diff_check(lambda: (layer(s, causal_mask(3), enc, None, b, None)[0] * probe).sum(),
                                   [s, enc] + layer.parameters())
        assert err < 1e-4


class TestFusedModel:
    def test_plain_config_bit_identical_to_unfused(self):
        """Disabling fusion gives the plain transformer's outputs bit for bit."""
        x, y = np.array([[5, 6, 4, 7]]), np.array([[1, 8, 9]])
        a = ConstrainedTransformer(12, ModelConfig(num_layers=2, d_model=8, ffn_dim=16, num_heads=2,
                                                   dropout=0.0, use_fusion=False)).eval()
        b = ConstrainedTransformer(12, ModelConfig(num_layers=2, d_model=8, ffn_dim=16, num_heads=2,
                                                   dropout=0.0, use_fusion=False)).eval()
        assert a.forward(x, y)[0].p_final.data.tobytes() == b.forward(x, y)[0].p_final.data.tobytes()
        fused = ConstrainedTransformer(12, ModelConfig(num_layers=2, d_model=8, ffn_dim=16, num_heads=2,
                                                       dropout=0.0, use_fusion=True, d_plm=6)).eval()
        for layer in fused.encoder_layers + fused.decoder_layers:
            layer.plm_attn = None
        assert fused.forward(x, y)[0].p_final.data.tobytes() == a.forward(x, y)[0].p_final.data.tobytes()

    @pytest.mark.parametrize("seed", range(3))
    def test_full_model_gradients(self, seed):
        cfg = ModelConfig(num_layers=1, d_model=4, ffn_dim=8, num_heads=2, dropout=0.0, use_fusion=True, d_plm=6,
                          seed=seed)
        m = ConstrainedTransformer(10, cfg).eval()
        rng = np.random.default_rng(seed)
        ctx, ctx_valid = Tensor(rng.normal(size=(1, 3, 6))), np.ones((1, 3), bool)
        x, y_in, y_out = np.array([[5, 6, 4, 7]]), np.array([[1, 7, 8]]), np.array([[7, 8, 2]])

        def f():
            p = m.forward(x, y_in, ctx, ctx_valid)[0].p_final
            return -nd.log(nd.gather_last(p, y_out)).sum()

        assert nd.finite_diff_check(f, m.parameters()) < 1e-4
