import numpy as np
import pytest

from changedet.head import ConstrainedHead, PlainHead, SegmentMlp
from changedet.tensor import ShapeError, Tensor


def rand(shape, seed=0):
    return Tensor(np.random.default_rng(seed).standard_normal(shape))


class TestSegmentMlp:
    def test_zero_weights_zero_output(self):
        mlp = SegmentMlp(8, np.random.default_rng(0))
        for p in mlp.parameters():
            p.data[:] = 0.0
        out = mlp(rand((2, 8), 1))
        assert np.array_equal(out.data, np.zeros((2, 8)))

    def test_output_shape(self):
        mlp = SegmentMlp(64, np.random.default_rng(0))
        assert mlp(rand((2, 64), 2)).shape == (2, 64)

    def test_identity_layers_reproduce_nonnegative_input(self):
        mlp = SegmentMlp(6, np.random.default_rng(0))
        for layer in (mlp.fc1, mlp.fc2, mlp.fc3):
            layer.weight.data[:] = np.eye(6)
            layer.bias.data[:] = 0.0
        x = Tensor(np.abs(np.random.default_rng(3).standard_normal((2, 6))))
        assert np.allclose(mlp(x).data, x.data, atol=1e-12)


class TestConstrainProject:
    def test_antisymmetric_weights_cancel_identical_inputs(self):
        head = ConstrainedHead(4, np.random.default_rng(0))
        weight = np.zeros((4, 8, 1, 1))
        weight[:, :4, 0, 0] = np.eye(4)
        weight[:, 4:, 0, 0] = -np.eye(4)
        head.project.weight.data = weight
        head.project.bias.data[:] = 0.0
        x = rand((4, 5, 5), 1)
        out = head.constrain_project(x, Tensor(x.data.copy()))
        assert np.allclose(out.data, 0.0, atol=1e-12)

    def test_output_shape(self):
        head = ConstrainedHead(64, np.random.default_rng(0))
        out = head.constrain_project(rand((64, 16, 16), 1), rand((64, 16, 16), 2))
        assert out.shape == (64, 16, 16)

    def test_matches_loop_oracle(self):
        head = ConstrainedHead(3, np.random.default_rng(4))
        a, b = rand((3, 4, 4), 5), rand((3, 4, 4), 6)
        out = head.constrain_project(a, b).data
        weight = head.project.weight.data[:, :, 0, 0]
        bias = head.project.bias.data
        stacked = np.concatenate([a.data, b.data], axis=0)
        expected = np.zeros((3, 4, 4))
        for o in range(3):
            for y in range(4):
                for x in range(4):
                    expected[o, y, x] = sum(weight[o, c] * stacked[c, y, x]
                                            for c in range(6)) + bias[o]
        assert np.allclose(out, expected, atol=1e-10)

    def test_spatial_mismatch(self):
        head = ConstrainedHead(4, np.random.default_rng(0))
        with pytest.raises(ShapeError):
            head.constrain_project(rand((4, 4, 4)), rand((4, 8, 8)))


def scalar_bilinear_oracle(plane, factor):
    h, w = plane.shape
    out = np.zeros((h * factor, w * factor))
    for oy in range(h * factor):
        for ox in range(w * factor):
            sy = (oy + 0.5) / factor - 0.5
            sx = (ox + 0.5) / factor - 0.5
            y0, x0 = int(np.floor(sy)), int(np.floor(sx))
            ty, tx = sy - y0, sx - x0
            y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
            y0, x0 = max(y0, 0), max(x0, 0)
            top = plane[y0, x0] * (1 - tx) + plane[y0, x1] * tx
            bottom = plane[y1, x0] * (1 - tx) + plane[y1, x1] * tx
            out[oy, ox] = top * (1 - ty) + bottom * ty
    return out


class TestFusePredict:
    def test_basis_rows_select_channels(self):
        seg = Tensor(np.eye(2, 8))
        constrain = rand((8, 4, 4), 7)
        out = ConstrainedHead.fuse_predict(seg, constrain).data
        for k in range(2):
            assert np.allclose(out[k], scalar_bilinear_oracle(constrain.data[k], 4),
                               atol=1e-10)

    def test_zero_embeddings_annihilate(self):
        out = ConstrainedHead.fuse_predict(Tensor(np.zeros((2, 8))), rand((8, 4, 4), 8))
        assert np.array_equal(out.data, np.zeros((2, 16, 16)))

    def test_matches_loop_then_upsample_oracle(self):
        seg = rand((2, 8), 9)
        constrain = rand((8, 4, 4), 10)
        out = ConstrainedHead.fuse_predict(seg, constrain).data
        scores = np.zeros((2, 4, 4))
        for k in range(2):
            for y in range(4):
                for x in range(4):
                    scores[k, y, x] = float(np.dot(seg.data[k], constrain.data[:, y, x]))
        for k in range(2):
            assert np.allclose(out[k], scalar_bilinear_oracle(scores[k], 4), atol=1e-10)

    def test_bilinearity(self):
        seg_a, seg_b = rand((2, 8), 11), rand((2, 8), 12)
        constrain = rand((8, 4, 4), 13)
        out_a = ConstrainedHead.fuse_predict(seg_a, constrain).data
        out_b = ConstrainedHead.fuse_predict(seg_b, constrain).data
        scaled = ConstrainedHead.fuse_predict(seg_a * 3.0, constrain).data
        summed = ConstrainedHead.fuse_predict(seg_a + seg_b, constrain).data
        assert np.allclose(scaled, 3.0 * out_a, atol=1e-10)
        assert np.allclose(summed, out_a + out_b, atol=1e-10)


class TestPlainHead:
    def test_upsamples_by_8(self):
        head = PlainHead(2, np.random.default_rng(0))
        out = head(rand((2, 8, 8), 14))
        assert out.shape == (2, 64, 64)
