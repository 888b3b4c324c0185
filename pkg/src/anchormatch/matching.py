"""Expectation matching, coarse-to-fine queries and cycle consistency."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import ResolutionError, ShapeError
from .network import FeaturePyramid, grid_coords
from .numerics import Tensor, bilinear_sample, l2_normalize, softmax


@dataclass(frozen=True)
class MatchResult:
    query: tuple[float, float]
    coarse_match: tuple[float, float]
    fine_match: tuple[float, float]
    cycle_distance: float
    peak_correlation: float
    index: int = 0


@dataclass
class BatchMatch:
    """Vectorized result of matching ``Q`` query points."""

    coarse: Tensor  # [Q, 2]
    fine: Tensor  # [Q, 2]
    coarse_distribution: Tensor  # [Q, Hc*Wc]
    window_origin: np.ndarray  # [Q, 2] (row, col) of the window's top-left fine node
    window_side: int

    @property
    def peak(self) -> np.ndarray:
        return self.coarse_distribution.data.max(axis=1)


def expectation_match(query_feature: Tensor, feature_map: Tensor, coords=None):
    """Softmax-weighted mean of grid coordinates under ``F_a(x)^T F_b(y)``.

    ``query_feature`` is ``[d]`` or ``[Q, d]``; ``feature_map`` is
    ``[d, H, W]``. Returns ``(point, distribution)`` with shapes ``[.., 2]``
    and ``[.., H*W]``.
    """
    single = query_feature.ndim == 1
    q = query_feature.reshape(1, -1) if single else query_feature
    d, h, w = feature_map.shape
    if q.shape[1] != d:
        raise ShapeError(f"query width {q.shape[1]} does not match map width {d}")
    coords = grid_coords(h, w) if coords is None else np.asarray(coords, dtype=np.float64)
    dist = softmax(q @ feature_map.reshape(d, h * w), axis=1)
    point = dist @ Tensor(coords)
    if single:
        return point.reshape(2), dist.reshape(h * w)
    return point, dist


def window_side(fine_hw, window_frac: float) -> int:
    side = int(round(window_frac * min(fine_hw)))
    if side < 2:
        raise ResolutionError(f"window of {window_frac} x {min(fine_hw)} cells is below 2x2")
    return side


def window_origin(centers: np.ndarray, fine_hw, side: int) -> np.ndarray:
    """Top-left (row, col) of a ``side``-square window centred on each point, shifted inside the map."""
    hf, wf = fine_hw
    col = np.rint(centers[:, 0] * (wf - 1) - (side - 1) / 2).astype(np.int64)
    row = np.rint(centers[:, 1] * (hf - 1) - (side - 1) / 2).astype(np.int64)
    return np.stack([np.clip(row, 0, hf - side), np.clip(col, 0, wf - side)], axis=1)


def window_match(query_features: Tensor, fine_map: Tensor, origins: np.ndarray, side: int):
    """Expectation match of each query restricted to its own ``side x side`` window."""
    d, hf, wf = fine_map.shape
    offs_r, offs_c = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    idx = (origins[:, 0, None] + offs_r.ravel()[None]) * wf + origins[:, 1, None] + offs_c.ravel()[None]
    coords = grid_coords(hf, wf)[idx]  # [Q, s*s, 2]
    feats = fine_map.reshape(d, hf * wf).T[idx]  # [Q, s*s, d]
    logits = (feats @ query_features.reshape(len(idx), d, 1)).reshape(len(idx), side * side)
    dist = softmax(logits, axis=1)
    point = (dist.reshape(len(idx), 1, side * side) @ Tensor(coords)).reshape(len(idx), 2)
    return point, dist


def _features(t: Tensor, normalize: bool, axis: int) -> Tensor:
    return l2_normalize(t, axis=axis) if normalize else t


def match_batch(points, source: FeaturePyramid, target: FeaturePyramid, window_frac: float = 1 / 8,
                normalize: bool = False) -> BatchMatch:
    """Coarse match over the whole target map, then a windowed fine match around it."""
    points = np.clip(np.asarray(points, dtype=np.float64).reshape(-1, 2), 0.0, 1.0)
    fine_t = _features(target.fine_updated, normalize, 0)
    side = window_side(fine_t.shape[1:], window_frac)
    qc = _features(bilinear_sample(source.coarse_updated, points), normalize, 1)
    coarse, dist = expectation_match(qc, _features(target.coarse_updated, normalize, 0))
    origins = window_origin(coarse.data, fine_t.shape[1:], side)
    qf = _features(bilinear_sample(source.fine_updated, points), normalize, 1)
    fine, _ = window_match(qf, fine_t, origins, side)
    return BatchMatch(coarse, fine, dist, origins, side)


def to_pixels(delta: np.ndarray, image_hw) -> np.ndarray:
    h, w = image_hw
    return np.asarray(delta) * np.array([w - 1, h - 1], dtype=np.float64)


def coarse_to_fine_query(x, pyr_a: FeaturePyramid, pyr_b: FeaturePyramid, window_frac: float = 1 / 8,
                         normalize: bool = False) -> MatchResult:
    m = match_batch(np.asarray(x, dtype=np.float64).reshape(1, 2), pyr_a, pyr_b, window_frac, normalize)
    back = match_batch(m.fine.data, pyr_b, pyr_a, window_frac, normalize)
    cyc = float(np.linalg.norm(to_pixels(back.fine.data[0] - np.asarray(x), pyr_a.image_hw)))
    return MatchResult(tuple(np.asarray(x, dtype=np.float64)), tuple(m.coarse.data[0]), tuple(m.fine.data[0]),
                       cyc, float(m.peak[0]))


def cycle_distances(points, pyr_a: FeaturePyramid, pyr_b: FeaturePyramid, window_frac: float = 1 / 8,
                    normalize: bool = False):
    """Forward a->b then back b->a; returns (forward match, ||x - x'|| in image-a pixels)."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    fwd = match_batch(points, pyr_a, pyr_b, window_frac, normalize)
    back = match_batch(fwd.fine.data, pyr_b, pyr_a, window_frac, normalize)
    dist = np.linalg.norm(to_pixels(back.fine.data - points, pyr_a.image_hw), axis=1)
    return fwd, dist


def cycle_distance(x, pyr_a: FeaturePyramid, pyr_b: FeaturePyramid, window_frac: float = 1 / 8,
                   normalize: bool = False) -> float:
    return float(cycle_distances(x, pyr_a, pyr_b, window_frac, normalize)[1][0])


def match_points(queries, pyr_a: FeaturePyramid, pyr_b: FeaturePyramid, window_frac: float = 1 / 8,
                 cycle_threshold_px: float = 5.0, top_k: int = 2000, normalize: bool = False) -> list[MatchResult]:
    """Match, drop entries whose cycle distance exceeds the threshold, keep the ``top_k`` most peaked."""
    queries = np.asarray(queries, dtype=np.float64).reshape(-1, 2)
    if len(queries) == 0:
        raise ValueError("no query points")
    fwd, cyc = cycle_distances(queries, pyr_a, pyr_b, window_frac, normalize)
    peak = fwd.peak
    keep = np.flatnonzero(cyc <= cycle_threshold_px)
    order = keep[np.lexsort((keep, -peak[keep]))][:top_k]
    return [
        MatchResult(tuple(queries[i]), tuple(fwd.coarse.data[i]), tuple(fwd.fine.data[i]), float(cyc[i]),
                    float(peak[i]), int(i))
        for i in order
    ]


def write_match_file(path, matches: list[MatchResult], image_hw_a, image_hw_b, settings: dict) -> None:
    """One line per match: ``u_a v_a u_b v_b cycle_px peak_prob``, with a '#' header."""
    (ha, wa), (hb, wb) = image_hw_a, image_hw_b
    head = [f"# image_a {wa} {ha} image_b {wb} {hb}"]
    head.append("# " + " ".join(f"{k}={v}" for k, v in settings.items()))
    head.append("# u_a v_a u_b v_b cycle_px peak_prob")
    body = [
        " ".join(repr(float(v)) for v in (*m.query, *m.fine_match, m.cycle_distance, m.peak_correlation))
        for m in matches
    ]
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write("\n".join(head + body) + "\n")
    os.replace(tmp, path)


def read_match_file(path):
    """Return ``(rows [N, 6], header dict)``."""
    rows, header = [], {}
    with open(path) as fh:
        for line in fh:
            s = line.strip()
            if not s:
                continue
            if s.startswith("#"):
                parts = s[1:].split()
                if parts and parts[0] == "image_a":
                    header["image_a"] = (int(parts[2]), int(parts[1]))
                    header["image_b"] = (int(parts[5]), int(parts[4]))
                else:
                    header.update(p.split("=", 1) for p in parts if "=" in p)
                continue
            rows.append([float(v) for v in s.split()])
    return np.asarray(rows, dtype=np.float64).reshape(-1, 6), header
