"""PCK / MMA metrics, synthetic evaluation sets and the ablation runner."""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, replace

import numpy as np

from .anchors import AnchorSet, GroundTruthField, perturb_anchors, sample_gt_anchors
from .errors import ArtifactNotFoundError, EmptyInputError
from .matching import MatchResult, match_batch, to_pixels
from .network import ModelConfig, ModelParams, forward, load_checkpoint
from .training import TrainConfig, TrainSample, iteration_rng, random_texture, synth_pair, train

DEFAULT_THRESHOLDS = (1.0, 2.0, 3.0, 5.0, 8.0, 10.0)


@dataclass(frozen=True)
class MetricCurve:
    thresholds: tuple[float, ...]
    values: tuple[float, ...]
    count: int

    def __post_init__(self):
        if np.any(np.diff(self.thresholds) < 0):
            raise ValueError("thresholds must be ascending")
        if np.any(np.diff(self.values) < 0):
            raise ValueError("metric curve must be non-decreasing")

    def at(self, threshold: float) -> float:
        return self.values[self.thresholds.index(threshold)]

    def to_table(self) -> str:
        lines = ["# threshold_px fraction count"]
        lines += [f"{t!r} {v!r} {self.count}" for t, v in zip(self.thresholds, self.values)]
        return "\n".join(lines) + "\n"


def curve_from_errors(errors_px, thresholds=DEFAULT_THRESHOLDS) -> MetricCurve:
    errors_px = np.asarray(errors_px, dtype=np.float64)
    if errors_px.size == 0:
        raise EmptyInputError("no matches to evaluate")
    thresholds = tuple(float(t) for t in thresholds)
    values = tuple(float(np.mean(errors_px <= t)) for t in thresholds)
    return MetricCurve(thresholds, values, int(errors_px.size))


def match_errors(matches, gt: GroundTruthField) -> np.ndarray:
    """Pixel distance between each match's fine point and the ground-truth target of its query."""
    if len(matches) == 0:
        raise EmptyInputError("no matches to evaluate")
    if isinstance(matches, np.ndarray):
        queries, preds = matches[:, :2], matches[:, 2:4]
    else:
        queries = np.array([m.query for m in matches], dtype=np.float64)
        preds = np.array([m.fine_match for m in matches], dtype=np.float64)
    target, valid = gt.lookup(queries)
    if not np.all(valid):
        raise ValueError("every evaluated query needs a valid ground-truth correspondence")
    return np.linalg.norm(to_pixels(preds - target, gt.shape), axis=1)


def pck(matches, gt: GroundTruthField, thresholds=DEFAULT_THRESHOLDS) -> MetricCurve:
    """Fraction of matches within each pixel threshold of the ground truth.

    ``matches`` is a list of :class:`MatchResult` or an ``[N, >=4]`` array whose
    first columns are ``u_a v_a u_b v_b``.
    """
    return curve_from_errors(match_errors(matches, gt), thresholds)


def mma(curves) -> MetricCurve:
    """Unweighted mean over image pairs of per-pair correct-match fractions."""
    curves = list(curves)
    if not curves:
        raise EmptyInputError("no per-pair curves")
    thresholds = curves[0].thresholds
    if any(c.thresholds != thresholds for c in curves):
        raise ValueError("curves use different thresholds")
    values = np.mean([c.values for c in curves], axis=0)
    return MetricCurve(thresholds, tuple(float(v) for v in values), sum(c.count for c in curves))


# ---------------------------------------------------------------------------
# synthetic evaluation sets
# ---------------------------------------------------------------------------


@dataclass
class EvalPair:
    sample: TrainSample
    anchors: AnchorSet


def make_eval_set(n_pairs: int = 100, texture: str = "mixed", warp_magnitude: float = 0.1, image_size: int = 96,
                  anchors_per_pair: int = 32, seed: int = 10_000, photometric_jitter: float = 1.0) -> list[EvalPair]:
    """Deterministic held-out pairs; seeds are disjoint from the training stream's by default."""
    out = []
    for i in range(n_pairs):
        rng = iteration_rng(seed, i)
        base = random_texture(rng, image_size, image_size, texture)
        sample = synth_pair(base, warp_magnitude, photometric_jitter, rng)
        anchors = sample_gt_anchors(sample.gt, anchors_per_pair, rng=rng)
        out.append(EvalPair(sample, anchors))
    return out


def dense_queries(gt: GroundTruthField, n: int = 64) -> np.ndarray:
    """A fixed ``n x n`` lattice of pixels, restricted to those with valid ground truth."""
    h, w = gt.shape
    rows = np.unique(np.rint(np.linspace(0, h - 1, n)).astype(int))
    cols = np.unique(np.rint(np.linspace(0, w - 1, n)).astype(int))
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    rr, cc = rr.ravel(), cc.ravel()
    keep = gt.valid_mask[rr, cc]
    return np.stack([cc[keep] / (w - 1), rr[keep] / (h - 1)], axis=1)


def pair_errors(params: ModelParams, pair: EvalPair, anchors: AnchorSet | None = None, window_frac: float = 0.125,
                grid: int = 64) -> np.ndarray:
    """Pixel error of every dense query of one pair."""
    s = pair.sample
    anchors = anchors if anchors is not None else pair.anchors
    pyr_a, pyr_b = forward(s.image_a, s.image_b, anchors, params)
    queries = dense_queries(s.gt, grid)
    m = match_batch(queries, pyr_a, pyr_b, window_frac, params.config.normalize_features)
    return match_errors(np.column_stack([queries, m.fine.data]), s.gt)


def evaluate_pair(params: ModelParams, pair: EvalPair, anchors: AnchorSet | None = None, window_frac: float = 0.125,
                  grid: int = 64, thresholds=DEFAULT_THRESHOLDS) -> MetricCurve:
    return curve_from_errors(pair_errors(params, pair, anchors, window_frac, grid), thresholds)


def eval_anchors(pair: EvalPair, anchor_count: int | None, anchor_noise, rng: np.random.Generator) -> AnchorSet:
    """The pair's anchors, optionally subsampled to ``anchor_count`` and then perturbed."""
    anchors = pair.anchors
    if anchor_count is not None and anchor_count < len(anchors):
        anchors = anchors.subset(np.sort(rng.choice(len(anchors), size=anchor_count, replace=False)))
    if anchor_noise is not None and anchor_noise[0] > 0:
        anchors = perturb_anchors(anchors, anchor_noise[0], anchor_noise[1], pair.sample.image_hw, rng)
    return anchors


def evaluate_model(params: ModelParams, pairs: list[EvalPair], anchor_count: int | None = None,
                   anchor_noise: tuple[float, float] | None = None, seed: int = 0, window_frac: float = 0.125,
                   grid: int = 64, thresholds=DEFAULT_THRESHOLDS) -> MetricCurve:
    """Dense PCK averaged over pairs, optionally with fewer or perturbed anchors."""
    if not pairs:
        raise EmptyInputError("empty evaluation set")
    curves = []
    for i, pair in enumerate(pairs):
        anchors = eval_anchors(pair, anchor_count, anchor_noise, iteration_rng(seed, i))
        curves.append(evaluate_pair(params, pair, anchors, window_frac, grid, thresholds))
    return mma(curves)


# ---------------------------------------------------------------------------
# ablation variants
# ---------------------------------------------------------------------------

MODEL_VARIANTS = {
    "full": {},
    "no_graph": {"use_graph": False},
    "low_res": {"coarse_stride": 16, "fine_stride": 4},
    "no_intra": {"use_intra": False},
    "no_point": {"use_intra": False, "use_inter": False},
}
EVAL_MODIFIERS = ("fewer_anchors", "noisy_anchors")

_TERM = re.compile(r"^([a-z_]+)(?:\(([^)]*)\))?$")


@dataclass(frozen=True)
class Variant:
    """A trained architecture plus optional evaluation-time anchor changes."""

    model: str = "full"
    anchors: int | None = None
    noise: tuple[float, float] | None = None

    @property
    def name(self) -> str:
        parts = [self.model]
        if self.anchors is not None:
            parts.append(f"fewer_anchors({self.anchors})")
        if self.noise is not None:
            parts.append(f"noisy_anchors({self.noise[0]:g},{self.noise[1]:g})")
        return "+".join(parts)

    def model_config(self, base: ModelConfig) -> ModelConfig:
        return replace(base, **MODEL_VARIANTS[self.model])


def parse_variant(text: str) -> Variant:
    """Parse ``name``, ``name(args)`` or ``+``-joined combinations, e.g. ``no_intra+noisy_anchors(0.6,50)``."""
    model, anchors, noise = "full", None, None
    for term in text.replace(" ", "").split("+"):
        m = _TERM.match(term)
        if not m:
            raise ValueError(f"cannot parse variant term {term!r}")
        name, args = m.group(1), m.group(2)
        if name in MODEL_VARIANTS and args is None:
            model = name
        elif name == "fewer_anchors" and args:
            anchors = int(args)
            if anchors < 1:
                raise ValueError("fewer_anchors needs a positive count")
        elif name == "noisy_anchors" and args:
            vals = [float(a) for a in args.split(",")]
            if len(vals) != 2:
                raise ValueError("noisy_anchors takes (fraction, sigma_px)")
            noise = (vals[0], vals[1])
        else:
            raise ValueError(f"unknown variant {term!r}")
    return Variant(model, anchors, noise)


def checkpoint_path(checkpoint_dir, model_variant: str) -> str:
    return os.path.join(checkpoint_dir, f"{model_variant}.ckpt")


def train_variant(model_variant: str, checkpoint_dir, train_config: TrainConfig, base: ModelConfig | None = None,
                  log: bool = True) -> str:
    """Train one architecture variant with the shared config and save its checkpoint."""
    base = base or ModelConfig()
    path = checkpoint_path(checkpoint_dir, model_variant)
    cfg = Variant(model_variant).model_config(base)
    log_path = os.path.join(checkpoint_dir, f"{model_variant}.log") if log else None
    if log_path and os.path.exists(log_path):
        os.remove(log_path)
    train(train_config, cfg, log_path=log_path, checkpoint_path=path)
    return path


def run_ablation(variant, eval_set: list[EvalPair], checkpoint_dir, seed: int = 0, **eval_kwargs) -> MetricCurve:
    """Evaluate one variant (string or :class:`Variant`) from its trained checkpoint."""
    variant = parse_variant(variant) if isinstance(variant, str) else variant
    path = checkpoint_path(checkpoint_dir, variant.model)
    if not os.path.exists(path):
        raise ArtifactNotFoundError(f"no checkpoint for variant {variant.model!r} at {path}")
    params = load_checkpoint(path)
    return evaluate_model(params, eval_set, variant.anchors, variant.noise, seed, **eval_kwargs)
