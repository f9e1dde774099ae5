import math

import numpy as np
import pytest

from changedet.attention import (
    MultiScaleDecoder,
    QueryDecoderLayer,
    cross_attention,
    map_from_tokens,
    mean_attention_grid,
    offset_cross_attention,
    relation_logits,
    sine_position_encoding,
    standard_cross_attention,
    tokens_from_map,
)
from changedet.encoder import SiameseBackbone
from changedet.tensor import ConfigError, ShapeError, Tensor, finite_difference_check


def rand(shape, seed=0, grad=False):
    return Tensor(np.random.default_rng(seed).standard_normal(shape), requires_grad=grad)


def zeros_like(t):
    return Tensor(np.zeros(t.shape))


class TestSinePositionEncoding:
    def test_range(self):
        table = sine_position_encoding(8, 8, 64)
        assert table.shape == (64, 64)
        assert table.min() >= -1.0 and table.max() <= 1.0

    def test_rows_pairwise_distinct(self):
        table = sine_position_encoding(8, 8, 64)
        for i in range(64):
            for j in range(i + 1, 64):
                assert not np.array_equal(table[i], table[j])

    def test_deterministic_and_shared_between_branches(self):
        first = sine_position_encoding(4, 6, 32)
        second = sine_position_encoding(4, 6, 32)
        assert np.array_equal(first, second)

    def test_width_must_divide_by_4(self):
        with pytest.raises(ConfigError):
            sine_position_encoding(4, 4, 30)


class TestTokenLayout:
    def test_roundtrip_bit_exact(self):
        fmap = rand((5, 3, 4), 1)
        tokens = tokens_from_map(fmap)
        assert tokens.shape == (12, 5)
        back = map_from_tokens(tokens, 3, 4)
        assert np.array_equal(back.data, fmap.data)


def loop_standard_attention(q, k, v):
    """Per-pair reference: scaled dot products, row softmax, additive residual."""
    nq, c = q.shape
    out = np.zeros_like(q)
    for i in range(nq):
        logits = np.array([np.dot(q[i], k[j]) for j in range(k.shape[0])]) / math.sqrt(c)
        logits -= logits.max()
        weights = np.exp(logits) / np.exp(logits).sum()
        out[i] = q[i] + sum(weights[j] * v[j] for j in range(k.shape[0]))
    return out


class TestStandardCrossAttention:
    def test_single_key_adds_value(self):
        q = rand((3, 4), 1)
        kv = rand((1, 4), 2)
        pos_kv = rand((1, 4), 3)
        out = standard_cross_attention(q, kv, zeros_like(q), pos_kv)
        assert np.allclose(out.data, q.data + (kv.data + pos_kv.data), atol=1e-12)

    def test_zero_query_gives_value_mean(self):
        kv = rand((5, 6), 4)
        q = Tensor(np.zeros((2, 6)))
        out = standard_cross_attention(q, kv, zeros_like(q), zeros_like(kv))
        assert np.allclose(out.data, np.broadcast_to(kv.data.mean(axis=0), (2, 6)),
                           atol=1e-12)

    def test_matches_loop_oracle(self):
        q_feat, kv_feat = rand((2, 8), 5), rand((3, 8), 6)
        pos_q, pos_kv = rand((2, 8), 7), rand((3, 8), 8)
        out = standard_cross_attention(q_feat, kv_feat, pos_q, pos_kv)
        expected = loop_standard_attention(q_feat.data + pos_q.data,
                                           kv_feat.data + pos_kv.data,
                                           kv_feat.data + pos_kv.data)
        assert np.allclose(out.data, expected, atol=1e-10)

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            standard_cross_attention(rand((2, 4)), rand((2, 6)),
                                     zeros_like(rand((2, 4))), zeros_like(rand((2, 6))))


class TestOffsetCrossAttention:
    def test_single_key_subtracts_value(self):
        q = rand((3, 4), 1)
        kv = rand((1, 4), 2)
        out, attn = offset_cross_attention(q, kv, zeros_like(q), zeros_like(kv))
        assert np.allclose(attn.data, 1.0, atol=1e-12)
        assert np.allclose(out.data, q.data - kv.data, atol=1e-12)

    def test_closed_form_two_keys(self):
        q = Tensor([[2.0, 0.0]])
        kv = Tensor([[1.0, 0.0], [0.0, 1.0]])
        out, attn = offset_cross_attention(q, kv, zeros_like(q), zeros_like(kv))
        e = math.e
        assert np.allclose(attn.data, [[e / (e + 1), 1 / (e + 1)]], atol=1e-4)
        assert np.allclose(out.data, [[1.2689, -0.2689]], atol=1e-4)

    def test_scale_invariance_of_map(self):
        q, kv = rand((4, 6), 9), rand((5, 6), 10)
        _, attn = offset_cross_attention(q, kv, zeros_like(q), zeros_like(kv))
        _, attn_scaled = offset_cross_attention(q * 10.0, kv, zeros_like(q), zeros_like(kv))
        assert np.allclose(attn.data, attn_scaled.data, atol=1e-10)
        _, attn_k = offset_cross_attention(q, kv * 3.0, zeros_like(q), zeros_like(kv))
        assert np.allclose(attn.data, attn_k.data, atol=1e-10)

    def test_map_matches_cosine_softmax_oracle(self):
        q, kv = rand((3, 5), 11), rand((4, 5), 12)
        _, attn = offset_cross_attention(q, kv, zeros_like(q), zeros_like(kv))
        qn = q.data / np.linalg.norm(q.data, axis=1, keepdims=True)
        kn = kv.data / np.linalg.norm(kv.data, axis=1, keepdims=True)
        cosines = qn @ kn.T
        assert np.all(np.abs(cosines) <= 1.0 + 1e-9)
        expected = np.exp(cosines) / np.exp(cosines).sum(axis=1, keepdims=True)
        assert np.allclose(attn.data, expected, atol=1e-10)
        assert np.allclose(attn.data.sum(axis=1), 1.0, atol=1e-6)

    def test_differs_from_standard_on_generic_input(self):
        q, kv = rand((3, 5), 13), rand((4, 5), 14)
        offset_out, _ = offset_cross_attention(q, kv, zeros_like(q), zeros_like(kv))
        standard_out = standard_cross_attention(q, kv, zeros_like(q), zeros_like(kv))
        assert not np.allclose(offset_out.data, standard_out.data, atol=1e-3)

    def test_dropout_only_in_training(self):
        q, kv = rand((6, 8), 15), rand((6, 8), 16)
        out_eval, _ = offset_cross_attention(q, kv, zeros_like(q), zeros_like(kv),
                                             dropout_p=0.5, training=False)
        out_eval2, _ = offset_cross_attention(q, kv, zeros_like(q), zeros_like(kv),
                                              dropout_p=0.5, training=False)
        assert np.array_equal(out_eval.data, out_eval2.data)
        out_train, _ = offset_cross_attention(
            q, kv, zeros_like(q), zeros_like(kv), dropout_p=0.5,
            rng=np.random.default_rng(0), training=True)
        assert not np.allclose(out_train.data, out_eval.data)

    def test_full_block_gradient(self):
        q = rand((4, 6), 17, grad=True)
        kv = rand((5, 6), 18, grad=True)
        pos_q, pos_kv = rand((4, 6), 19), rand((5, 6), 20)

        def block(q, kv):
            out, _ = offset_cross_attention(q, kv, pos_q, pos_kv)
            return out

        assert finite_difference_check(block, [q, kv]) < 1e-4


class TestQueryDecoderLayer:
    def make(self, **kwargs):
        return QueryDecoderLayer(16, np.random.default_rng(0), **kwargs)

    def test_output_shape_independent_of_context_length(self):
        layer = self.make()
        layer.eval()
        query_pos = rand((2, 16), 1)
        for length in (4, 16, 64):
            out = layer(rand((2, 16), 2), rand((length, 16), 3), query_pos,
                        Tensor(np.zeros((length, 16))))
            assert out.shape == (2, 16)

    def test_zero_ffn_reduces_to_attention_subblock(self):
        layer = self.make()
        layer.eval()
        for p in layer.ffn.parameters():
            p.data[:] = 0.0
        queries, context = rand((2, 16), 4), rand((9, 16), 5)
        query_pos, pos_kv = rand((2, 16), 6), rand((9, 16), 7)
        out = layer(queries, context, query_pos, pos_kv)
        attended = standard_cross_attention(queries, context, query_pos, pos_kv)
        manual = layer.norm_ffn(layer.norm_attn(attended))
        assert np.allclose(out.data, manual.data, atol=1e-12)

    def test_gradient_reaches_query_pos(self):
        decoder = MultiScaleDecoder(2, 16, np.random.default_rng(1))
        decoder.eval()
        layer = decoder.layers[0]
        out = layer(decoder.queries, rand((8, 16), 8), decoder.query_pos,
                    Tensor(np.zeros((8, 16))))
        out.sum().backward()
        assert decoder.query_pos.grad is not None
        assert float(np.abs(decoder.query_pos.grad).sum()) > 0


class TestMultiScaleDecoder:
    def make_inputs(self, seed=0, size=64, channels=16):
        backbone = SiameseBackbone(8, channels, 8, np.random.default_rng(seed))
        rng = np.random.default_rng(seed + 1)
        pa = backbone(Tensor(rng.random((3, size, size))))
        pb = backbone(Tensor(rng.random((3, size, size))))
        return pa, pb

    def test_key_lengths_per_scale(self):
        pa, pb = self.make_inputs()
        decoder = MultiScaleDecoder(2, 16, np.random.default_rng(2))
        decoder.eval()
        _, _, attn, grids = decoder(pa, pb)
        assert [a.shape[1] for a in attn] == [4, 16, 64]
        assert grids == [(2, 2), (4, 4), (8, 8)]

    def test_exactly_three_attention_and_decoder_layers(self):
        decoder = MultiScaleDecoder(2, 16, np.random.default_rng(3))
        assert len(decoder.layers) == 3
        pa, pb = self.make_inputs(4)
        decoder.eval()
        _, _, attn, _ = decoder(pa, pb)
        assert len(attn) == 3

    def test_identical_pyramids_stay_well_formed(self):
        backbone = SiameseBackbone(8, 16, 8, np.random.default_rng(5))
        image = Tensor(np.random.default_rng(6).random((3, 64, 64)))
        pyramid = backbone(image)
        decoder = MultiScaleDecoder(2, 16, np.random.default_rng(7))
        decoder.eval()
        pix, ys, attn, _ = decoder(pyramid, pyramid)
        for a in attn:
            assert np.allclose(a.data.sum(axis=1), 1.0, atol=1e-6)
        for t in pix + ys:
            assert np.all(np.isfinite(t.data))

    def test_no_self_attention_parameters_by_default(self):
        decoder = MultiScaleDecoder(2, 16, np.random.default_rng(8))
        names = [name for name, _ in decoder.named_parameters()]
        assert all("self_attn" not in name for name in names)
        with_sa = MultiScaleDecoder(2, 16, np.random.default_rng(8),
                                    use_self_attention=True)
        sa_names = [name for name, _ in with_sa.named_parameters()]
        assert any("self_attn" in name for name in sa_names)
        assert with_sa.param_count() > decoder.param_count()

    def test_eval_forward_is_bit_deterministic(self):
        pa, pb = self.make_inputs(9)
        decoder = MultiScaleDecoder(2, 16, np.random.default_rng(10), dropout_p=0.2)
        decoder.eval()
        first = decoder(pa, pb)
        second = decoder(pa, pb)
        for a, b in zip(first[0], second[0]):
            assert np.array_equal(a.data, b.data)
        for a, b in zip(first[2], second[2]):
            assert np.array_equal(a.data, b.data)

    def test_relation_logits_shape_and_mean_grid(self):
        pa, pb = self.make_inputs(11)
        decoder = MultiScaleDecoder(2, 16, np.random.default_rng(12))
        decoder.eval()
        pix, ys, attn, grids = decoder(pa, pb)
        logits = relation_logits(pix[-1], ys[-1], grids[-1])
        assert logits.shape == (2, 8, 8)
        grid = mean_attention_grid(attn[-1].data, grids[-1])
        assert grid.shape == (8, 8)
        assert abs(grid.sum() * 64 / 64 - grid.sum()) < 1e-12
