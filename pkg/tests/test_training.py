import numpy as np
import pytest
from conftest import tiny_params
from hypothesis import given, settings
from hypothesis import strategies as st

from anchormatch.matching import match_batch
from anchormatch.network import forward, grid_coords
from anchormatch.numerics import Tensor, finite_difference_check
from anchormatch.training import (
    Adam,
    TrainConfig,
    Trainer,
    apply_homography,
    correspondence_loss,
    distribution_uncertainty,
    homography_from_corners,
    iteration_rng,
    random_texture,
    synth_pair,
    train,
    training_loss,
)

CORNERS = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


def tiny_config(**kw):
    base = dict(learning_rate=1e-3, total_iters=3, queries_per_pair=16, anchors_per_pair=4, image_size=64)
    return TrainConfig(**{**base, **kw})


class TestTextures:
    @pytest.mark.parametrize("kind", ["noise", "repeated", "mixed"])
    def test_range_and_shape(self, kind):
        img = random_texture(np.random.default_rng(0), 64, 80, kind)
        assert img.shape == (3, 64, 80) and img.min() >= 0 and img.max() <= 1

    def test_repeated_is_periodic(self):
        img = random_texture(np.random.default_rng(2), 96, 96, "repeated")
        # some period in [16, 32] reproduces the image exactly along both axes
        assert any(np.allclose(img[:, p:, :], img[:, :-p, :]) and np.allclose(img[:, :, p:], img[:, :, :-p])
                   for p in range(16, 33))

    def test_unknown(self):
        with pytest.raises(ValueError):
            random_texture(np.random.default_rng(0), 64, 64, "stripes")


class TestSynthPair:
    def test_identity(self):
        base = random_texture(np.random.default_rng(0), 64, 64, "noise")
        s = synth_pair(base, 0.0, 0.0)
        assert np.array_equal(s.image_a, s.image_b)
        np.testing.assert_array_equal(s.gt.flow, s.gt.pixel_coords())
        assert s.gt.valid_mask.all()

    def test_translation_homography(self):
        t = np.array([0.1, -0.05])
        h = homography_from_corners(CORNERS, CORNERS + t)
        pts = np.random.default_rng(0).uniform(size=(50, 2))
        np.testing.assert_allclose(apply_homography(h, pts)[0], pts + t, atol=1e-12)

    def test_flow_matches_projective_map(self):
        rng = np.random.default_rng(3)
        s = synth_pair(random_texture(rng, 96, 96, "noise"), 0.15, 1.0, rng)
        idx = rng.integers(0, 96, size=(1000, 2))
        pts = np.stack([idx[:, 1] / 95, idx[:, 0] / 95], axis=1)
        hom = np.column_stack([pts, np.ones(1000)]) @ s.homography.T
        direct = hom[:, :2] / hom[:, 2:]
        valid = s.gt.valid_mask[idx[:, 0], idx[:, 1]]
        np.testing.assert_allclose(s.gt.flow[idx[:, 0], idx[:, 1]][valid], direct[valid], atol=1e-9)

    def test_inverse_recovers_source(self):
        rng = np.random.default_rng(4)
        s = synth_pair(random_texture(rng, 64, 64, "noise"), 0.15, 0.0, rng)
        back, _ = apply_homography(np.linalg.inv(s.homography), s.gt.flow[s.gt.valid_mask])
        np.testing.assert_allclose(back, s.gt.pixel_coords()[s.gt.valid_mask], atol=1e-9)

    def test_small_image(self):
        with pytest.raises(ValueError):
            synth_pair(np.zeros((3, 32, 32)))


class TestUncertainty:
    def test_one_hot(self):
        coords = grid_coords(3, 3)
        p = np.eye(9)[4]
        assert distribution_uncertainty(p, coords[4], coords, 1e-3) == pytest.approx(1e-3, abs=1e-15)

    def test_two_point(self):
        coords = np.array([[0.0, 0.0], [1.0, 0.0]])
        assert distribution_uncertainty([0.5, 0.5], [0.5, 0.0], coords, 1e-3) == pytest.approx(0.501, abs=1e-15)

    @given(st.integers(0, 2**32 - 1), st.floats(0.05, 0.95))
    @settings(max_examples=100, deadline=None)
    def test_contraction_is_smaller(self, seed, lam):
        # symmetric distribution on a 5x5 grid has its mean at the centre cell;
        # moving mass onto that cell keeps the mean and shrinks the spread
        rng = np.random.default_rng(seed)
        coords = grid_coords(5, 5)
        half = rng.dirichlet(np.ones(25)).reshape(5, 5)
        p = (half + half[::-1, ::-1]).ravel() / 2
        p[12] = 0.0
        p /= p.sum()
        q = (1 - lam) * p
        q[12] += lam
        mean = p @ coords
        np.testing.assert_allclose(q @ coords, mean, atol=1e-12)
        assert distribution_uncertainty(q, mean, coords) < distribution_uncertainty(p, mean, coords)

    def test_permutation_invariant(self):
        rng = np.random.default_rng(1)
        coords = grid_coords(3, 4)
        p = rng.dirichlet(np.ones(12))
        perm = rng.permutation(12)
        mean = p @ coords
        assert distribution_uncertainty(p[perm], mean, coords[perm]) == pytest.approx(
            distribution_uncertainty(p, mean, coords), abs=1e-15)


class TestLoss:
    def test_zero_when_exact(self):
        y = Tensor(np.array([[0.2, 0.3], [0.7, 0.1]]))
        loss = correspondence_loss(y, y, np.full((2, 4), 0.25), y.data, grid_coords(2, 2))
        assert loss.data == 0.0

    def test_direct_formula(self):
        # sigma = 1 exactly: uniform over (0,0),(2,0) gives spread 1, floor tiny
        coords = np.array([[0.0, 0.0], [2.0, 0.0]])
        yc = Tensor([[1.3, 0.0]])
        yf = Tensor([[1.0, 0.4]])
        loss = correspondence_loss(yc, yf, np.array([[0.5, 0.5]]), [[1.0, 0.0]], coords, sigma_floor=1e-300)
        # sigma measured around y_c = 1.3: sqrt(0.5*1.69 + 0.5*0.49) = sqrt(1.09)
        expected = (0.3 + 0.4) / np.sqrt(1.09)
        assert float(loss.data) == pytest.approx(expected, abs=1e-14)

    def test_empty(self):
        with pytest.raises(ValueError):
            correspondence_loss(Tensor(np.zeros((0, 2))), Tensor(np.zeros((0, 2))), np.zeros((0, 4)),
                                np.zeros((0, 2)), grid_coords(2, 2))

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=50, deadline=None)
    def test_non_negative(self, seed):
        rng = np.random.default_rng(seed)
        coords = grid_coords(3, 3)
        p = rng.dirichlet(np.ones(9), size=4)
        loss = correspondence_loss(Tensor(p @ coords), Tensor(rng.uniform(size=(4, 2))), p,
                                   rng.uniform(size=(4, 2)), coords)
        assert loss.data >= 0


class TestTrainStep:
    def sample(self, seed=0):
        rng = iteration_rng(0, seed)
        return synth_pair(random_texture(rng, 64, 64, "noise"), 0.1, 1.0, rng)

    def test_loss_gradient_wrt_features(self):
        p = tiny_params()
        s = self.sample()
        cfg = tiny_config(queries_per_pair=4, window_frac=0.25)
        pa, pb = s.gt.valid_pairs()
        rng = np.random.default_rng(0)
        q = rng.choice(len(pa), 4, replace=False)
        from anchormatch.anchors import sample_gt_anchors

        anchors = sample_gt_anchors(s.gt, 3, rng=rng)
        _, m = training_loss(p, s, anchors, pa[q], pb[q], cfg)
        # sigma is a constant weight in the loss, so the oracle must hold it fixed too
        sigma = distribution_uncertainty(m.coarse_distribution, m.coarse, grid_coords(8, 8))

        def loss():
            fa, fb = forward(s.image_a, s.image_b, anchors, p)
            mm = match_batch(pa[q], fa, fb, cfg.window_frac)
            return correspondence_loss(mm.coarse, mm.fine, None, pb[q], None, sigma=sigma)

        leaves = [p["refine.b"], p["backbone.coarse_head.b"], p["p2i.wout"], p["intra.0.wq"], p["inter.1.corr.b2"]]
        assert finite_difference_check(loss, leaves) < 1e-4

    def test_deterministic(self):
        results = []
        for _ in range(2):
            p = tiny_params(randomize_residuals=False)
            t = Trainer(p, tiny_config())
            t.step(self.sample(), np.random.default_rng(5))
            t.step(self.sample(1), np.random.default_rng(6))
            results.append(p)
        for k in results[0].tensors:
            assert np.array_equal(results[0][k].data, results[1][k].data)

    def test_schedule(self):
        cfg = TrainConfig()
        assert cfg.lr_at(0) == 1e-4
        assert cfg.lr_at(49_999) == 1e-4
        assert cfg.lr_at(50_000) == 5e-5
        assert cfg.lr_at(100_000) == 2.5e-5

    def test_noise_schedule(self):
        cfg = TrainConfig(total_iters=100)
        assert cfg.noise_at(79) == (0.0, 0.0)
        assert cfg.noise_at(80) == (0.3, 8.0)

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0)
        with pytest.raises(ValueError):
            TrainConfig(sigma_floor=0)

    def test_perturbation_does_not_touch_gt(self):
        s = self.sample(2)
        flow = s.gt.flow.copy()
        t = Trainer(tiny_params(), tiny_config(total_iters=1, noise_start=0.0))
        t.step(s, np.random.default_rng(0))
        assert np.array_equal(flow, s.gt.flow)

    def test_train_writes_log_and_checkpoint(self, tmp_path):
        log = tmp_path / "train.log"
        ckpt = tmp_path / "m.ckpt"
        from anchormatch.network import ModelConfig
        from conftest import TINY

        tr = train(tiny_config(), ModelConfig(**TINY), log_path=log, checkpoint_path=ckpt)
        lines = log.read_text().splitlines()
        assert len(lines) == 3 and tr.iteration == 3
        assert len(lines[0].split()) == 5
        assert ckpt.exists()


class TestAdam:
    def test_quadratic(self):
        x = Tensor([3.0, -2.0], requires_grad=True)
        opt = Adam([x])
        for _ in range(2000):
            opt.zero_grad()
            (x * x).sum().backward()
            opt.step(0.05)
        np.testing.assert_allclose(x.data, 0.0, atol=1e-3)

    def test_first_step_is_lr_sign(self):
        x = Tensor([1.0, -1.0], requires_grad=True)
        opt = Adam([x])
        (x * Tensor([2.0, 3.0])).sum().backward()
        opt.step(0.1)
        np.testing.assert_allclose(x.data, [0.9, -1.1], atol=1e-7)
