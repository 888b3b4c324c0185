import numpy as np
import pytest

from anchormatch.errors import ConfigurationError, PairingError
from anchormatch.layers import (
    AttentionParams,
    InterParams,
    NodeBatch,
    attention_pass,
    inter_points_pass,
    intra_points_pass,
    points_to_image_pass,
)
from anchormatch.numerics import Tensor
from anchormatch.posenc import PosEncodingConfig, sincos_2d

D, DP = 8, 8
PCFG = PosEncodingConfig(dim=DP)


def nodes(rng, n, d=D):
    coords = rng.uniform(size=(n, 2))
    return NodeBatch(Tensor(rng.normal(size=(n, d))), coords, sincos_2d(coords, PCFG))


class TestInter:
    def test_zero_final_layer_is_identity(self):
        rng = np.random.default_rng(0)
        p = InterParams.init(rng, D, DP)
        p.corr.w2.data[:] = 0
        x, y = nodes(rng, 5), nodes(rng, 5)
        x2, y2 = inter_points_pass(x, y, p)
        assert np.array_equal(x2.attributes.data, x.attributes.data)
        assert np.array_equal(y2.attributes.data, y.attributes.data)

    def test_rowwise_equals_joint(self):
        rng = np.random.default_rng(1)
        p = InterParams.init(rng, D, DP)
        p.corr.b2.data[:] = rng.normal(size=D)
        x, y = nodes(rng, 6), nodes(rng, 6)
        jx, _ = inter_points_pass(x, y, p)
        for i in range(6):
            xi = NodeBatch(x.attributes[i : i + 1], x.coords[i : i + 1], x.pos.data[i : i + 1])
            yi = NodeBatch(y.attributes[i : i + 1], y.coords[i : i + 1], y.pos.data[i : i + 1])
            sx, _ = inter_points_pass(xi, yi, p)
            np.testing.assert_allclose(sx.attributes.data[0], jx.attributes.data[i], atol=1e-13)

    def test_swap(self):
        rng = np.random.default_rng(2)
        p = InterParams.init(rng, D, DP)
        x, y = nodes(rng, 4), nodes(rng, 4)
        a, b = inter_points_pass(x, y, p)
        b2, a2 = inter_points_pass(y, x, p)
        assert np.array_equal(a.attributes.data, a2.attributes.data)
        assert np.array_equal(b.attributes.data, b2.attributes.data)

    def test_mismatch(self):
        rng = np.random.default_rng(3)
        with pytest.raises(PairingError):
            inter_points_pass(nodes(rng, 3), nodes(rng, 4), InterParams.init(rng, D, DP))


class TestAttention:
    def params(self, seed=0, heads=2):
        return AttentionParams.init(np.random.default_rng(seed), D, DP, heads)

    def test_zero_value_and_ffn_is_identity(self):
        rng = np.random.default_rng(0)
        p = self.params()
        p.wv.data[:] = 0
        p.ffn.w2.data[:] = 0
        q = nodes(rng, 7)
        out = attention_pass(q, nodes(rng, 3), p)
        assert np.array_equal(out.attributes.data, q.attributes.data)

    def test_equal_keys_uniform(self):
        rng = np.random.default_rng(1)
        p = self.params()
        src = NodeBatch(Tensor(np.tile(rng.normal(size=D), (5, 1))), np.full((5, 2), 0.3),
                        np.tile(sincos_2d([[0.3, 0.3]], PCFG), (5, 1)))
        _, attn = attention_pass(nodes(rng, 4), src, p, return_attention=True)
        np.testing.assert_allclose(attn, 0.2, atol=1e-15)

    def test_single_source(self):
        rng = np.random.default_rng(2)
        p = self.params()
        p.ffn.w2.data[:] = 0
        src, q = nodes(rng, 1), nodes(rng, 3)
        out, attn = attention_pass(q, src, p, return_attention=True)
        assert np.all(attn == 1.0)
        expected = q.attributes.data + (src.attributes.data @ p.wv.data) @ p.wout.data
        np.testing.assert_allclose(out.attributes.data, expected, atol=1e-13)

    def test_orthogonal_keys(self):
        # one head, identity projections: logits are the dot products scaled by 1/sqrt(d_k)
        d = 4
        eye = np.eye(d + 4, d)
        p = AttentionParams.init(np.random.default_rng(0), d, 4, 1)
        p.wq.data[:] = eye
        p.wk.data[:] = eye
        keys = np.array([[1.0, 0, 0, 0], [0, 1.0, 0, 0]])
        src = NodeBatch(Tensor(keys), np.zeros((2, 2)), np.zeros((2, 4)))
        q = NodeBatch(Tensor([[100.0, 0, 0, 0]]), np.zeros((1, 2)), np.zeros((1, 4)))
        _, attn = attention_pass(q, src, p, return_attention=True)
        # softmax(50, 0): second weight exp(-50)
        np.testing.assert_allclose(attn[0, 0], [1.0, np.exp(-50.0)], rtol=1e-12, atol=1e-25)

    def test_literal_residual(self):
        rng = np.random.default_rng(4)
        p = self.params()
        q, s = nodes(rng, 3), nodes(rng, 2)
        a = attention_pass(q, s, p).attributes.data
        b = attention_pass(q, s, p, literal_residual=True).attributes.data
        hidden = a - b  # h + F(h) minus F(h)
        p.ffn.w2.data[:] = 0
        p.ffn.b2.data[:] = 0
        np.testing.assert_allclose(attention_pass(q, s, p).attributes.data, hidden, atol=1e-12)

    def test_width_mismatch(self):
        rng = np.random.default_rng(5)
        with pytest.raises(ConfigurationError):
            attention_pass(nodes(rng, 2, d=6), nodes(rng, 2), self.params())


class TestDerivedPasses:
    def test_intra_singleton(self):
        rng = np.random.default_rng(0)
        _, attn = intra_points_pass(nodes(rng, 1), AttentionParams.init(rng, D, DP, 2), return_attention=True)
        assert np.all(attn == 1.0)

    def test_intra_permutation(self):
        rng = np.random.default_rng(1)
        p = AttentionParams.init(rng, D, DP, 2)
        z = nodes(rng, 6)
        perm = rng.permutation(6)
        zp = NodeBatch(Tensor(z.attributes.data[perm]), z.coords[perm], z.pos.data[perm])
        np.testing.assert_allclose(intra_points_pass(zp, p).attributes.data,
                                   intra_points_pass(z, p).attributes.data[perm], atol=1e-10)

    def test_image_nodes_independent(self):
        rng = np.random.default_rng(2)
        p = AttentionParams.init(rng, D, DP, 2)
        anchors, img = nodes(rng, 4), nodes(rng, 10)
        full = points_to_image_pass(anchors, img, p).attributes.data
        for i in (0, 5, 9):
            one = NodeBatch(img.attributes[i : i + 1], img.coords[i : i + 1], img.pos.data[i : i + 1])
            np.testing.assert_allclose(points_to_image_pass(anchors, one, p).attributes.data[0], full[i], atol=1e-13)

    def test_p2i_zero_value_identity(self):
        rng = np.random.default_rng(3)
        p = AttentionParams.init(rng, D, DP, 2)
        p.wv.data[:] = 0
        p.ffn.w2.data[:] = 0
        img = nodes(rng, 9)
        assert np.array_equal(points_to_image_pass(nodes(rng, 2), img, p).attributes.data, img.attributes.data)
