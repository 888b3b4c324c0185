"""
Soft matching on a feature grid
===============================

A query feature is compared with every cell of the other image's feature
map. The softmax of those scores is a distribution over cells, and its mean
is the match. Sharper scores give a mean closer to the best cell; flat
scores pull it toward the centroid of the grid.

Run from the repository root::

    python3 demos/soft_matching.py
"""

import numpy as np

from anchormatch.matching import expectation_match
from anchormatch.network import grid_coords
from anchormatch.numerics import Tensor
from anchormatch.posenc import PosEncodingConfig, sincos_2d

rng = np.random.default_rng(0)

# a 6x8 map of unit features; the query is a copy of cell (row 2, col 5)
d, h, w = 16, 6, 8
fmap = rng.normal(size=(d, h, w))
fmap /= np.linalg.norm(fmap, axis=0, keepdims=True)
target = fmap[:, 2, 5]
print("true cell in (u, v):", (5 / (w - 1), 2 / (h - 1)))

# scaling the query is the same as lowering the softmax temperature
for scale in (0.5, 2.0, 8.0, 32.0):
    point, dist = expectation_match(Tensor(scale * target), Tensor(fmap))
    print(f"scale {scale:5.1f}  match {np.round(point.data, 3)}  peak mass {dist.data.max():.3f}")

# at zero temperature-scale every cell is equally likely: the mean is the grid centre
point, _ = expectation_match(Tensor(np.zeros(d)), Tensor(fmap))
print("flat scores give", point.data, "which is the mean of", grid_coords(h, w).mean(axis=0))

# Position embeddings
# -------------------
# Node positions enter attention as sinusoids. Nearby points get similar
# embeddings, so dot products between embeddings fall off with distance.
cfg = PosEncodingConfig(dim=32)
origin = sincos_2d([[0.5, 0.5]], cfg)[0]
for dx in (0.0, 0.01, 0.05, 0.2, 0.5):
    e = sincos_2d([[0.5 + dx, 0.5]], cfg)[0]
    print(f"offset {dx:4.2f}  similarity {origin @ e / (origin @ origin):.3f}")
