"""
Train a small matcher and look at its matches
=============================================

Trains on synthetic homography pairs (or loads a checkpoint), then matches
a held-out pair given a handful of ground-truth anchors. Writes a side by
side picture with match lines and prints dense PCK.

A few hundred iterations already beat the untrained network; the models in
the acceptance suite use 5000 iterations at lr 1e-3.

    python3 demos/train_and_match.py --iters 300 --out matches.png
    python3 demos/train_and_match.py --checkpoint model.ckpt
"""

import argparse
import logging

import numpy as np

from anchormatch.cli import render_matches
from anchormatch.evaluation import dense_queries, evaluate_model, make_eval_set, match_errors
from anchormatch.matching import match_points
from anchormatch.network import ModelConfig, ModelParams, forward, load_checkpoint
from anchormatch.training import TrainConfig, train

parser = argparse.ArgumentParser(description=__doc__.splitlines()[1])
parser.add_argument("--iters", type=int, default=300)
parser.add_argument("--lr", type=float, default=1e-3)
parser.add_argument("--checkpoint", help="skip training and load this checkpoint")
parser.add_argument("--out", default="matches.png")
args = parser.parse_args()
logging.basicConfig(level=logging.INFO, format="%(message)s")

pairs = make_eval_set(5, "mixed", warp_magnitude=0.1)

untrained = ModelParams.init(ModelConfig())
print("untrained PCK@5px:", round(evaluate_model(untrained, pairs).at(5.0), 3))

if args.checkpoint:
    params = load_checkpoint(args.checkpoint)
else:
    params = train(TrainConfig(learning_rate=args.lr, total_iters=args.iters)).params
print("trained PCK@5px:  ", round(evaluate_model(params, pairs).at(5.0), 3))

# dense matches for one pair, kept only if the round trip a -> b -> a lands within 5 px
pair = pairs[0]
s = pair.sample
pa, pb = forward(s.image_a, s.image_b, pair.anchors, params)
queries = dense_queries(s.gt, 24)
matches = match_points(queries, pa, pb, cycle_threshold_px=5.0)
print(f"{len(matches)} of {len(queries)} queries pass the cycle check")
if matches:
    print(f"median error of kept matches: {np.median(match_errors(matches, s.gt)):.2f} px")
render_matches(s.image_a, s.image_b, matches, pair.anchors, args.out)
print("wrote", args.out)
