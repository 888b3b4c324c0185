"""Anchor sets, the anchor/image graph descriptor and anchor sampling.

Coordinates are normalized ``(u, v)`` with ``u`` along the image width and
``v`` along the height. Pixel ``(row i, col j)`` of an ``H x W`` image sits at
``(j / (W - 1), i / (H - 1))``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import EmptyAnchorError, InsufficientDataError, PairingError


@dataclass(frozen=True)
class AnchorSet:
    points_a: np.ndarray
    points_b: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.points_a, dtype=np.float64).reshape(-1, 2)
        b = np.asarray(self.points_b, dtype=np.float64).reshape(-1, 2)
        if len(a) != len(b):
            raise PairingError(f"anchor lists differ in length: {len(a)} vs {len(b)}")
        if len(a) == 0:
            raise EmptyAnchorError("anchor set is empty")
        for pts in (a, b):
            if not np.all(np.isfinite(pts)) or pts.min() < 0.0 or pts.max() > 1.0:
                raise ValueError("anchor coordinates must lie in [0, 1]^2")
        object.__setattr__(self, "points_a", a)
        object.__setattr__(self, "points_b", b)

    def __len__(self):
        return len(self.points_a)

    @property
    def K(self) -> int:
        return len(self.points_a)

    def subset(self, idx) -> "AnchorSet":
        idx = np.asarray(idx)
        return AnchorSet(self.points_a[idx], self.points_b[idx])

    def swapped(self) -> "AnchorSet":
        return AnchorSet(self.points_b, self.points_a)


@dataclass(frozen=True)
class CorrespondenceGraph:
    """Edge bookkeeping for the anchor/image graph.

    The three edge families are complete or one-to-one, so only counts are
    stored; the layers wire them implicitly.
    """

    K: int
    coarse_dims_a: tuple[int, int]
    coarse_dims_b: tuple[int, int]

    @property
    def inter_edges(self) -> int:
        return 2 * self.K

    @property
    def intra_edges(self) -> int:
        # complete digraph per image, self-loops included
        return 2 * self.K * self.K

    @property
    def image_edges_a(self) -> int:
        return self.K * self.coarse_dims_a[0] * self.coarse_dims_a[1]

    @property
    def image_edges_b(self) -> int:
        return self.K * self.coarse_dims_b[0] * self.coarse_dims_b[1]

    def inter_degree(self) -> tuple[np.ndarray, np.ndarray]:
        """In- and out-degree of each of the 2K anchor nodes in the inter-points subgraph."""
        src = np.concatenate([np.arange(self.K), self.K + np.arange(self.K)])
        dst = np.concatenate([self.K + np.arange(self.K), np.arange(self.K)])
        return np.bincount(dst, minlength=2 * self.K), np.bincount(src, minlength=2 * self.K)


def build_graph(anchors: AnchorSet, coarse_dims_a, coarse_dims_b) -> CorrespondenceGraph:
    if anchors is None or len(anchors) == 0:
        raise EmptyAnchorError("cannot build a graph without anchors")
    return CorrespondenceGraph(len(anchors), tuple(coarse_dims_a), tuple(coarse_dims_b))


@dataclass(frozen=True)
class GroundTruthField:
    """Dense a->b correspondence: ``flow[i, j]`` is the normalized target of pixel (i, j)."""

    flow: np.ndarray  # (H, W, 2)
    valid_mask: np.ndarray  # (H, W) bool

    @property
    def shape(self) -> tuple[int, int]:
        return self.valid_mask.shape

    def pixel_coords(self) -> np.ndarray:
        h, w = self.shape
        jj, ii = np.meshgrid(np.arange(w), np.arange(h))
        return np.stack([jj / (w - 1), ii / (h - 1)], axis=-1)

    def valid_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        mask = self.valid_mask
        return self.pixel_coords()[mask], self.flow[mask]

    def lookup(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Flow and validity at normalized points (bilinear flow, nearest-pixel validity)."""
        from .numerics import interpolation_matrix

        points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        h, w = self.shape
        m = interpolation_matrix(points, h, w)
        flow = np.asarray(m @ np.nan_to_num(self.flow.reshape(h * w, 2)))
        ii = np.rint(points[:, 1] * (h - 1)).astype(int)
        jj = np.rint(points[:, 0] * (w - 1)).astype(int)
        return flow, self.valid_mask[ii, jj]


def _cell_index(points: np.ndarray, grid_cells) -> np.ndarray:
    gx, gy = grid_cells
    cx = np.minimum((points[:, 0] * gx).astype(np.int64), gx - 1)
    cy = np.minimum((points[:, 1] * gy).astype(np.int64), gy - 1)
    return cy * gx + cx


def _grid_filter_indices(points_a: np.ndarray, grid_cells, max_per_cell: int, rng: np.random.Generator) -> np.ndarray:
    gx, gy = grid_cells
    if gx < 1 or gy < 1:
        raise ValueError("grid must have at least one cell per axis")
    cells = _cell_index(points_a, grid_cells)
    order = np.argsort(cells, kind="stable")
    bounds = np.searchsorted(cells[order], np.arange(gx * gy + 1))
    keep = []
    for c in range(gx * gy):
        members = order[bounds[c] : bounds[c + 1]]
        if len(members) == 0:
            continue
        if len(members) > max_per_cell:
            members = rng.choice(members, size=max_per_cell, replace=False)
        else:
            members = rng.permutation(members)
        keep.extend(members.tolist())
    return np.asarray(keep, dtype=np.int64)


def grid_filter(candidates, grid_cells=(8, 8), max_per_cell: int = 2, rng: np.random.Generator | None = None) -> AnchorSet:
    """Keep at most ``max_per_cell`` uniformly chosen pairs per cell of image a.

    ``candidates`` is ``(points_a, points_b)``. Output is ordered by cell
    (row-major over cells), then by draw order within a cell.
    """
    pa, pb = (np.asarray(c, dtype=np.float64).reshape(-1, 2) for c in candidates)
    if len(pa) == 0:
        raise EmptyAnchorError("no candidate pairs to filter")
    if len(pa) != len(pb):
        raise PairingError("candidate lists differ in length")
    rng = rng if rng is not None else np.random.default_rng(0)
    keep = _grid_filter_indices(pa, grid_cells, max_per_cell, rng)
    return AnchorSet(pa[keep], pb[keep])


def sample_gt_anchors(gt: GroundTruthField, K: int, grid_cells=(8, 8), rng: np.random.Generator | None = None,
                      max_per_cell: int = 2) -> AnchorSet:
    """Draw ``K`` anchor pairs ``(x, flow(x))`` from valid ground-truth pixels.

    The grid filter proposes evenly spread pairs; if it yields more than ``K``
    a uniform subset is kept (order preserved), and if fewer, the remainder is
    topped up uniformly from the unused valid pixels.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    if K < 1:
        raise EmptyAnchorError("K must be at least 1")
    pa, pb = gt.valid_pairs()
    if len(pa) < K:
        raise InsufficientDataError(f"need {K} valid pixels, have {len(pa)}")
    chosen = _grid_filter_indices(pa, grid_cells, max_per_cell, rng)
    if len(chosen) > K:
        chosen = chosen[np.sort(rng.choice(len(chosen), size=K, replace=False))]
    elif len(chosen) < K:
        rest = np.setdiff1d(np.arange(len(pa)), chosen)
        chosen = np.concatenate([chosen, rng.choice(rest, size=K - len(chosen), replace=False)])
    return AnchorSet(pa[chosen], np.clip(pb[chosen], 0.0, 1.0))


def perturb_anchors(anchors: AnchorSet, fraction: float, sigma_px: float, image_dims, rng: np.random.Generator) -> AnchorSet:
    """Displace ``floor(fraction * K)`` random b-points by Gaussian pixel noise.

    ``image_dims`` is ``(H, W)`` of image b; noise is converted to normalized
    units per axis and the result clamped to ``[0, 1]^2``.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    if sigma_px < 0:
        raise ValueError("sigma_px must be non-negative")
    k = len(anchors)
    n = int(np.floor(fraction * k))
    pb = anchors.points_b.copy()
    if n == 0 or sigma_px == 0:
        return AnchorSet(anchors.points_a.copy(), pb)
    h, w = image_dims
    idx = rng.choice(k, size=n, replace=False)
    noise = rng.normal(0.0, sigma_px, size=(n, 2)) / np.array([w - 1, h - 1], dtype=np.float64)
    pb[idx] = np.clip(pb[idx] + noise, 0.0, 1.0)
    return AnchorSet(anchors.points_a.copy(), pb)


def write_anchor_file(path, anchors: AnchorSet, header: str | None = None) -> None:
    lines = []
    if header:
        lines.extend(f"# {h}" for h in header.splitlines())
    for (ua, va), (ub, vb) in zip(anchors.points_a, anchors.points_b):
        lines.append(" ".join(repr(float(x)) for x in (ua, va, ub, vb)))
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


class AnchorFileError(ValueError):
    def __init__(self, path, lineno, msg):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.lineno = lineno


def read_anchor_file(path) -> AnchorSet:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            parts = s.split()
            if len(parts) != 4:
                raise AnchorFileError(path, lineno, f"expected 4 values, got {len(parts)}")
            try:
                vals = [float(p) for p in parts]
            except ValueError as exc:
                raise AnchorFileError(path, lineno, str(exc)) from None
            if not all(0.0 <= v <= 1.0 for v in vals):
                raise AnchorFileError(path, lineno, "coordinates must lie in [0, 1]")
            rows.append(vals)
    if not rows:
        raise EmptyAnchorError(f"{path}: no anchor pairs")
    arr = np.asarray(rows)
    return AnchorSet(arr[:, :2], arr[:, 2:])
