import time

import numpy as np
import pytest
from conftest import TINY, random_anchors, tiny_params

from anchormatch.anchors import AnchorSet
from anchormatch.errors import (
    EmptyAnchorError,
    MagicMismatchError,
    ShapeError,
    TruncatedCheckpointError,
    VersionMismatchError,
)
from anchormatch.network import (
    ModelConfig,
    ModelParams,
    dump_checkpoint,
    encode_backbone,
    forward,
    load_checkpoint,
    parse_checkpoint,
    propagate,
    refine,
    save_checkpoint,
)
from anchormatch.numerics import Tensor, finite_difference_check


class TestBackbone:
    def test_strides(self):
        c, f = encode_backbone(np.random.default_rng(0).uniform(size=(3, 64, 64)), tiny_params())
        assert c.shape == (8, 8, 8) and f.shape == (8, 32, 32)

    def test_low_res_strides(self):
        p = tiny_params(coarse_stride=16, fine_stride=4)
        c, f = encode_backbone(np.zeros((3, 64, 64)), p)
        assert c.shape[1:] == (4, 4) and f.shape[1:] == (16, 16)

    def test_zero_image_zero_features(self):
        c, f = encode_backbone(np.zeros((3, 32, 32)), tiny_params())
        assert not c.data.any() and not f.data.any()

    def test_indivisible(self):
        with pytest.raises(ShapeError):
            encode_backbone(np.zeros((3, 60, 64)), tiny_params())

    def test_identical_images(self):
        img = np.random.default_rng(1).uniform(size=(3, 32, 32))
        a = np.random.default_rng(2).uniform(size=(2, 2))
        pa, pb = forward(img, img, AnchorSet(a, a), tiny_params())
        assert np.array_equal(pa.coarse.data, pb.coarse.data)
        assert np.array_equal(pa.fine_updated.data, pb.fine_updated.data)


class TestPropagate:
    def maps(self, seed=0, h=4, w=5):
        rng = np.random.default_rng(seed)
        return Tensor(rng.normal(size=(8, h, w))), Tensor(rng.normal(size=(8, h, w)))

    def test_default_init_is_identity(self):
        ca, cb = self.maps()
        a, b = propagate(ca, cb, random_anchors(np.random.default_rng(0), 5), tiny_params(randomize_residuals=False))
        assert np.array_equal(a.data, ca.data) and np.array_equal(b.data, cb.data)

    def test_zero_update_weights_identity(self):
        p = tiny_params()
        for name, t in p.tensors.items():
            if name.endswith((".wv", ".ffn.w2", ".corr.w2", ".corr.b2", ".ffn.b2")):
                t.data[...] = 0
        ca, cb = self.maps(1)
        a, b = propagate(ca, cb, random_anchors(np.random.default_rng(1), 3), p)
        assert np.array_equal(a.data, ca.data) and np.array_equal(b.data, cb.data)

    @pytest.mark.parametrize("k", [1, 4, 17])
    def test_shape(self, k):
        ca, cb = self.maps(2, 3, 6)
        a, b = propagate(ca, cb, random_anchors(np.random.default_rng(k), k), tiny_params())
        assert a.shape == ca.shape and b.shape == cb.shape

    def test_anchor_order_invariance(self):
        p = tiny_params()
        ca, cb = self.maps(3)
        rng = np.random.default_rng(3)
        anchors = random_anchors(rng, 6)
        perm = rng.permutation(6)
        a1, b1 = propagate(ca, cb, anchors, p)
        a2, b2 = propagate(ca, cb, anchors.subset(perm), p)
        np.testing.assert_allclose(a1.data, a2.data, atol=1e-10)
        np.testing.assert_allclose(b1.data, b2.data, atol=1e-10)

    def test_no_graph_passthrough(self):
        ca, cb = self.maps(4)
        a, b = propagate(ca, cb, random_anchors(np.random.default_rng(0), 2), tiny_params(use_graph=False))
        assert a is ca and b is cb

    def test_empty(self):
        ca, cb = self.maps()
        with pytest.raises(EmptyAnchorError):
            propagate(ca, cb, None, tiny_params())


class TestRefine:
    def test_zero_weights_zero_output(self):
        p = tiny_params()
        p["refine.w"].data[...] = 0
        rng = np.random.default_rng(0)
        out = refine(Tensor(rng.normal(size=(8, 4, 4))), Tensor(rng.normal(size=(8, 16, 16))), p)
        assert out.shape == (8, 16, 16) and not out.data.any()

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            refine(Tensor(np.zeros((8, 4, 4))), Tensor(np.zeros((8, 12, 16))), tiny_params())

    def test_gradient_reaches_both_inputs(self):
        p = tiny_params()
        rng = np.random.default_rng(1)
        c = Tensor(rng.normal(size=(8, 3, 3)), requires_grad=True)
        f = Tensor(rng.normal(size=(8, 12, 12)), requires_grad=True)
        w = rng.normal(size=(8, 12, 12))
        err = finite_difference_check(lambda: (refine(c, f, p) * w).sum(), [c, f])
        assert err < 1e-4
        assert np.abs(c.grad).sum() > 0 and np.abs(f.grad).sum() > 0


class TestForward:
    def test_deterministic(self):
        rng = np.random.default_rng(0)
        a, b = rng.uniform(size=(3, 32, 32)), rng.uniform(size=(3, 32, 32))
        anchors = random_anchors(rng, 4)
        p = tiny_params()
        x = forward(a, b, anchors, p)
        y = forward(a, b, anchors, p)
        for n in ("coarse_updated", "fine_updated"):
            assert np.array_equal(getattr(x[0], n).data, getattr(y[0], n).data)
            assert np.array_equal(getattr(x[1], n).data, getattr(y[1], n).data)

    def test_budget_64px(self):
        p = ModelParams.init(ModelConfig(coarse_dim=32))
        rng = np.random.default_rng(0)
        a, b = rng.uniform(size=(3, 64, 64)), rng.uniform(size=(3, 64, 64))
        anchors = random_anchors(rng, 8)
        forward(a, b, anchors, p)
        t = time.perf_counter()
        forward(a, b, anchors, p)
        assert time.perf_counter() - t < 1.0


class TestCheckpoint:
    def test_round_trip_bitwise(self, tmp_path):
        p = tiny_params(3)
        path = tmp_path / "m.ckpt"
        save_checkpoint(p, path, {"note": "x"})
        q = load_checkpoint(path)
        assert q.config == p.config
        assert list(q.tensors) == list(p.tensors)
        for k in p.tensors:
            assert np.array_equal(p[k].data, q[k].data)
        rng = np.random.default_rng(0)
        a, b = rng.uniform(size=(3, 32, 32)), rng.uniform(size=(3, 32, 32))
        anchors = random_anchors(rng, 3)
        assert np.array_equal(forward(a, b, anchors, p)[1].fine_updated.data,
                              forward(a, b, anchors, q)[1].fine_updated.data)

    def test_meta(self):
        _, meta = parse_checkpoint(dump_checkpoint(tiny_params(), {"iteration": 7}))
        assert meta["iteration"] == 7 and meta["model"]["coarse_dim"] == TINY["coarse_dim"]

    def test_errors(self):
        blob = dump_checkpoint(tiny_params())
        with pytest.raises(MagicMismatchError):
            parse_checkpoint(b"X" + blob[1:])
        with pytest.raises(VersionMismatchError):
            parse_checkpoint(blob[:8] + (99).to_bytes(4, "little") + blob[12:])
        with pytest.raises(TruncatedCheckpointError):
            parse_checkpoint(blob[:-3])
        with pytest.raises(TruncatedCheckpointError):
            parse_checkpoint(blob + b"\0")

    def test_no_partial_file(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(tiny_params(), path)
        assert [x.name for x in tmp_path.iterdir()] == ["m.ckpt"]
