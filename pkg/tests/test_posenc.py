import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anchormatch.errors import ConfigurationError
from anchormatch.posenc import PosEncodingConfig, adaptive_scale, frequencies, sincos_2d


def test_origin_embedding():
    e = sincos_2d([[0.0, 0.0]], PosEncodingConfig())[0]
    np.testing.assert_array_equal(e[0::2], 0.0)
    np.testing.assert_array_equal(e[1::2], 1.0)


def test_channel_layout_matches_formula():
    cfg = PosEncodingConfig(dim=16, temperature=100.0)
    u, v = 0.3, 0.8
    e = sincos_2d([[u, v]], cfg)[0]
    for i in range(4):
        w = 2 * np.pi / 100.0 ** (2 * i / 8)
        assert e[2 * i] == pytest.approx(np.sin(w * u), abs=1e-15)
        assert e[2 * i + 1] == pytest.approx(np.cos(w * u), abs=1e-15)
        assert e[8 + 2 * i] == pytest.approx(np.sin(w * v), abs=1e-15)
        assert e[8 + 2 * i + 1] == pytest.approx(np.cos(w * v), abs=1e-15)


def test_axes_not_interchangeable():
    cfg = PosEncodingConfig()
    e = sincos_2d([[0.2, 0.7], [0.7, 0.2]], cfg)
    assert not np.allclose(e[0], e[1])


def test_bad_dim():
    for dim in (0, 6, 31):
        with pytest.raises(ConfigurationError):
            PosEncodingConfig(dim=dim)


def test_no_collisions_on_million_points():
    cfg = PosEncodingConfig()
    pts = np.random.default_rng(0).uniform(size=(1_000_000, 2))
    pts = np.unique(pts, axis=0)
    half = cfg.dim // 2
    keys = []
    for chunk in np.array_split(pts, 10):
        e = sincos_2d(chunk, cfg)
        # lowest-frequency sin/cos of each axis already pin down (u, v) on [0, 1)
        keys.append(e[:, [0, 1, half, half + 1]])
    keys = np.concatenate(keys)
    assert len(np.unique(keys, axis=0)) == len(pts)


def test_frequencies_decrease():
    w = frequencies(PosEncodingConfig(dim=32))
    assert w[0] == pytest.approx(2 * np.pi)
    assert np.all(np.diff(w) < 0)


@given(st.lists(st.tuples(st.floats(-3, 3), st.floats(-3, 3)), min_size=2, max_size=20))
@settings(max_examples=100, deadline=None)
def test_bounded_and_pointwise(points):
    cfg = PosEncodingConfig()
    pts = np.asarray(points)
    e = sincos_2d(pts, cfg)
    assert np.all(np.abs(e) <= 1.0)
    for i in range(len(pts)):
        np.testing.assert_array_equal(sincos_2d(pts[i : i + 1], cfg)[0], e[i])


class TestAdaptiveScale:
    def test_unit_range_is_identity(self):
        pts = np.random.default_rng(0).uniform(size=(5, 2))
        out, scales = adaptive_scale([pts, pts], (1.0, 1.0), np.random.default_rng(0))
        np.testing.assert_array_equal(out[0], pts)
        np.testing.assert_array_equal(scales[1], [1.0, 1.0])

    def test_componentwise(self, monkeypatch):
        import anchormatch.posenc as pe

        monkeypatch.setattr(pe, "draw_scale", lambda r, rng: np.array([2.0, 0.5]))
        out, _ = pe.adaptive_scale([np.array([[0.5, 0.5]])], (0.5, 2.0), np.random.default_rng(0))
        np.testing.assert_array_equal(out[0], [[1.0, 0.25]])

    def test_reproducible_and_in_range(self):
        pts = [np.ones((3, 2)), np.ones((4, 2))]
        a = adaptive_scale(pts, (0.5, 2.0), np.random.default_rng(9))
        b = adaptive_scale(pts, (0.5, 2.0), np.random.default_rng(9))
        for x, y in zip(a[1], b[1]):
            assert np.array_equal(x, y)
            assert np.all((x >= 0.5) & (x <= 2.0))

    def test_shared_scale(self):
        _, scales = adaptive_scale([np.ones((1, 2))] * 2, (0.5, 2.0), np.random.default_rng(1), per_image=False)
        assert np.array_equal(scales[0], scales[1])
