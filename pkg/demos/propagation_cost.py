"""
Why anchors keep propagation linear
===================================

Every image node talks only to the K anchors, and anchors talk to each
other. The multiply-accumulate count therefore grows like K * H * W, while
a full correlation between two H x W maps grows like (H * W)^2.

This script counts MACs of the propagation module with the built-in counter
and fits the growth exponent on a log-log scale.

    python3 demos/propagation_cost.py
"""

import numpy as np

from anchormatch.anchors import AnchorSet
from anchormatch.network import ModelConfig, ModelParams, propagate
from anchormatch.numerics import Tensor, count_macs

params = ModelParams.init(ModelConfig())
d = params.config.coarse_dim
rng = np.random.default_rng(0)


def macs(side, k):
    ca = Tensor(rng.normal(size=(d, side, side)))
    cb = Tensor(rng.normal(size=(d, side, side)))
    anchors = AnchorSet(rng.uniform(size=(k, 2)), rng.uniform(size=(k, 2)))
    with count_macs() as counter:
        propagate(ca, cb, anchors, params)
    return counter


print("grid sweep, K = 32")
print(f"{'side':>5} {'edge':>12} {'node':>12} {'total':>12} {'full corr':>14}")
sides = (48, 72, 96, 144)
totals = []
for s in sides:
    c = macs(s, 32)
    totals.append(c.total())
    print(f"{s:5d} {c['edge']:12d} {c['node']:12d} {c.total():12d} {(s * s) ** 2 * d:14d}")
slope = np.polyfit(np.log([s * s for s in sides]), np.log(totals), 1)[0]
print(f"exponent vs H*W: {slope:.3f}   (full correlation: 2.0)")

print("\nanchor sweep, 12 x 12 grid")
ks = (25, 50, 100, 200)
totals = [macs(12, k).total() for k in ks]
for k, t in zip(ks, totals):
    print(f"K {k:4d}  total {t}")
print(f"exponent vs K: {np.polyfit(np.log(ks), np.log(totals), 1)[0]:.3f}")
