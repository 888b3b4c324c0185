"""Dense correspondence conditioned on sparse anchor matches.

A small convolutional backbone produces coarse and fine feature maps for
both images. Anchor correspondences become graph nodes that exchange
messages across images (paired edges) and within each image (attention),
then broadcast to every coarse cell. Matches come from a softmax
expectation over the coarse map, refined inside a local fine window.

Everything runs on float64 numpy with a small reverse-mode autodiff engine.
"""

from .anchors import AnchorSet, GroundTruthField, build_graph, grid_filter, perturb_anchors, sample_gt_anchors
from .evaluation import MetricCurve, evaluate_model, make_eval_set, mma, parse_variant, pck, run_ablation
from .matching import MatchResult, coarse_to_fine_query, cycle_distance, expectation_match, match_points
from .network import ModelConfig, ModelParams, forward, load_checkpoint, save_checkpoint
from .numerics import Tensor, finite_difference_check
from .posenc import PosEncodingConfig, adaptive_scale, sincos_2d
from .training import TrainConfig, synth_pair, train

__all__ = [
    "AnchorSet",
    "GroundTruthField",
    "MatchResult",
    "MetricCurve",
    "ModelConfig",
    "ModelParams",
    "PosEncodingConfig",
    "Tensor",
    "TrainConfig",
    "adaptive_scale",
    "build_graph",
    "coarse_to_fine_query",
    "cycle_distance",
    "evaluate_model",
    "expectation_match",
    "finite_difference_check",
    "forward",
    "grid_filter",
    "load_checkpoint",
    "make_eval_set",
    "match_points",
    "mma",
    "parse_variant",
    "pck",
    "perturb_anchors",
    "run_ablation",
    "sample_gt_anchors",
    "save_checkpoint",
    "sincos_2d",
    "synth_pair",
    "train",
]
