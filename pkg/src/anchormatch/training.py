"""Synthetic homography pairs, the uncertainty-weighted loss and the training loop."""

from __future__ import annotations

import logging
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy import ndimage

from .anchors import AnchorSet, GroundTruthField, perturb_anchors, sample_gt_anchors
from .errors import InsufficientDataError
from .matching import BatchMatch, match_batch, to_pixels
from .network import (
    ModelConfig,
    ModelParams,
    dump_checkpoint,
    forward,
    grid_coords,
    load_checkpoint,
    parse_checkpoint,
    save_checkpoint,
)
from .numerics import Tensor, interpolation_matrix, norm
from .posenc import adaptive_scale

__all__ = [
    "Adam",
    "TrainConfig",
    "TrainSample",
    "Trainer",
    "correspondence_loss",
    "distribution_uncertainty",
    "dump_checkpoint",
    "homography_from_corners",
    "load_checkpoint",
    "parse_checkpoint",
    "random_texture",
    "save_checkpoint",
    "synth_pair",
    "train",
]

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------


def _normalize01(x: np.ndarray) -> np.ndarray:
    lo, hi = x.min(), x.max()
    return (x - lo) / (hi - lo) if hi > lo else np.zeros_like(x)


def _noise_texture(rng, h, w, wrap=False):
    mode = "wrap" if wrap else "reflect"
    img = np.zeros((3, h, w))
    for sigma, amp in ((0.7, 0.35), (1.5, 0.5), (3.0, 0.8), (6.0, 1.0)):
        white = rng.normal(size=(3, h, w))
        smooth = ndimage.gaussian_filter(white, sigma=(0, sigma, sigma), mode=mode)
        img += amp * smooth / (smooth.std() + 1e-12)
    return img


def random_texture(rng: np.random.Generator, h: int = 96, w: int = 96, kind: str = "mixed") -> np.ndarray:
    """Procedural RGB image ``[3, h, w]`` in ``[0, 1]``.

    ``noise`` is multi-octave coloured noise with a few solid rectangles;
    ``repeated`` tiles one small noise patch periodically, so local
    appearance alone cannot tell the copies apart; ``mixed`` picks either.
    """
    if kind == "mixed":
        kind = "noise" if rng.random() < 0.5 else "repeated"
    if kind == "noise":
        img = _noise_texture(rng, h, w)
        for _ in range(rng.integers(3, 8)):
            r0, c0 = rng.integers(0, h - 8), rng.integers(0, w - 8)
            rh, rw = rng.integers(4, h // 3), rng.integers(4, w // 3)
            img[:, r0 : r0 + rh, c0 : c0 + rw] = rng.normal(size=(3, 1, 1)) * 2.0
    elif kind == "repeated":
        period = int(rng.integers(16, 33))
        tile = _noise_texture(rng, period, period, wrap=True)
        reps = (1, h // period + 2, w // period + 2)
        off_r, off_c = rng.integers(0, period, size=2)
        img = np.tile(tile, reps)[:, off_r : off_r + h, off_c : off_c + w]
    else:
        raise ValueError(f"unknown texture kind {kind!r}")
    return np.stack([_normalize01(c) for c in img])


def homography_from_corners(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """3x3 homography mapping four ``src`` points to ``dst`` (direct linear solve, h33 = 1)."""
    a, b = [], []
    for (x, y), (u, v) in zip(src, dst):
        a.append([x, y, 1, 0, 0, 0, -u * x, -u * y])
        a.append([0, 0, 0, x, y, 1, -v * x, -v * y])
        b.extend([u, v])
    h = np.linalg.solve(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))
    return np.append(h, 1.0).reshape(3, 3)


def apply_homography(hmat: np.ndarray, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Projective map of ``[N, 2]`` points; also returns the homogeneous scale."""
    pts = np.column_stack([points, np.ones(len(points))]) @ hmat.T
    return pts[:, :2] / pts[:, 2:3], pts[:, 2]


@dataclass
class TrainSample:
    image_a: np.ndarray
    image_b: np.ndarray
    gt: GroundTruthField
    homography: np.ndarray

    @property
    def image_hw(self) -> tuple[int, int]:
        return self.image_a.shape[1:]


_CORNERS = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


def _sample_homography(rng, magnitude, max_attempts=100):
    for _ in range(max_attempts):
        dst = _CORNERS + rng.uniform(-magnitude, magnitude, size=(4, 2))
        try:
            hmat = homography_from_corners(_CORNERS, dst)
        except np.linalg.LinAlgError:
            continue
        _, wscale = apply_homography(hmat, _CORNERS)
        if np.all(wscale > 1e-3) and np.linalg.cond(hmat) < 1e8:
            return hmat
    raise RuntimeError(f"no invertible homography after {max_attempts} attempts")


def warp_image(image: np.ndarray, hmat: np.ndarray) -> np.ndarray:
    """Inverse-map ``image`` through ``hmat`` (a -> b); uncovered pixels become 0."""
    _, h, w = image.shape
    coords = grid_coords(h, w)
    src, wscale = apply_homography(np.linalg.inv(hmat), coords)
    inside = np.all((src >= 0) & (src <= 1), axis=1) & (wscale > 0)
    m = interpolation_matrix(np.clip(src, 0, 1), h, w)
    out = np.asarray(m @ image.reshape(3, h * w).T).T
    out[:, ~inside] = 0.0
    return out.reshape(3, h, w)


def synth_pair(base_image, warp_magnitude: float = 0.15, photometric_jitter: float = 1.0,
               rng: np.random.Generator | None = None) -> TrainSample:
    """Warp ``base_image`` by a random corner-perturbation homography.

    Image b is ``a`` seen through the homography, followed by contrast
    (log-uniform within ``1.25 ** +-jitter``) and brightness (``+-0.1 * jitter``)
    changes. ``gt.flow`` is the exact projective map of every pixel of a.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    image_a = np.asarray(base_image.data if isinstance(base_image, Tensor) else base_image, dtype=np.float64)
    _, h, w = image_a.shape
    if h < 64 or w < 64:
        raise ValueError("base image must be at least 64x64")
    hmat = np.eye(3) if warp_magnitude == 0 else _sample_homography(rng, warp_magnitude)
    image_b = image_a.copy() if warp_magnitude == 0 else warp_image(image_a, hmat)
    if photometric_jitter > 0:
        contrast = 1.25 ** rng.uniform(-photometric_jitter, photometric_jitter)
        bright = rng.uniform(-0.1, 0.1) * photometric_jitter
        image_b = np.clip((image_b - 0.5) * contrast + 0.5 + bright, 0.0, 1.0)
    coords = grid_coords(h, w)
    target, wscale = apply_homography(hmat, coords)
    valid = np.all((target >= 0) & (target <= 1), axis=1) & (wscale > 0)
    gt = GroundTruthField(target.reshape(h, w, 2), valid.reshape(h, w))
    return TrainSample(image_a, image_b, gt, hmat)


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------


def distribution_uncertainty(distribution, mean, coords, sigma_floor: float = 1e-3) -> np.ndarray:
    """Isotropic spread ``sqrt(sum p ||c - mean||^2) + floor`` of each row of ``distribution``.

    Computed on plain arrays, so it never carries gradient.
    """
    p = np.asarray(distribution.data if isinstance(distribution, Tensor) else distribution, dtype=np.float64)
    mu = np.asarray(mean.data if isinstance(mean, Tensor) else mean, dtype=np.float64)
    single = p.ndim == 1
    p, mu = np.atleast_2d(p), np.atleast_2d(mu)
    sq = ((np.asarray(coords)[None, :, :] - mu[:, None, :]) ** 2).sum(axis=2)
    sigma = np.sqrt(np.maximum((p * sq).sum(axis=1), 0.0)) + sigma_floor
    return sigma[0] if single else sigma


def correspondence_loss(coarse: Tensor, fine: Tensor, distribution, target, coords, sigma_floor: float = 1e-3,
                        sigma=None) -> Tensor:
    """``sum_q (||y_gt - y_c|| + ||y_gt - y||) / sigma_q`` over a batch of queries.

    ``sigma`` overrides the per-query weights (e.g. to hold them fixed in a
    gradient check); by default they come from ``distribution``.
    """
    target = np.asarray(target, dtype=np.float64).reshape(-1, 2)
    if len(target) == 0:
        raise ValueError("empty query batch")
    if sigma is None:
        sigma = distribution_uncertainty(distribution, coarse, coords, sigma_floor)
    err = norm(coarse - Tensor(target), axis=1) + norm(fine - Tensor(target), axis=1)
    return (err * Tensor(1.0 / sigma)).sum()


# ---------------------------------------------------------------------------
# optimization
# ---------------------------------------------------------------------------


class Adam:
    """Adaptive-moment first-order optimizer over a list of leaf tensors."""

    def __init__(self, params: list[Tensor], betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self, lr: float) -> None:
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    halve_every: int = 50_000
    total_iters: int = 5000
    queries_per_pair: int = 128
    anchors_per_pair: int = 32
    image_size: int = 96
    texture: str = "mixed"
    warp_magnitude: float = 0.15
    photometric_jitter: float = 1.0
    scale_range: tuple[float, float] = (0.5, 2.0)
    anchor_noise: tuple[float, float] = (0.3, 8.0)
    noise_start: float = 0.8
    window_frac: float = 0.125
    sigma_floor: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    grid_cells: tuple[int, int] = (8, 8)
    max_per_cell: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.sigma_floor <= 0:
            raise ValueError("learning_rate and sigma_floor must be positive")
        for name in ("scale_range", "anchor_noise", "betas", "grid_cells"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    def lr_at(self, iteration: int) -> float:
        return self.learning_rate * 0.5 ** (iteration // self.halve_every)

    def noise_at(self, iteration: int) -> tuple[float, float]:
        if iteration >= int(self.noise_start * self.total_iters):
            return self.anchor_noise
        return (0.0, 0.0)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def iteration_rng(seed: int, iteration: int) -> np.random.Generator:
    """Counter-style stream: one independent generator per (seed, iteration)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, iteration])))


@dataclass
class StepStats:
    iteration: int
    loss: float
    lr: float
    coarse_px: float
    fine_px: float

    def line(self) -> str:
        return f"{self.iteration} {self.loss!r} {self.lr!r} {self.coarse_px!r} {self.fine_px!r}"


@dataclass
class Trainer:
    params: ModelParams
    config: TrainConfig
    optimizer: Adam | None = None
    iteration: int = 0
    history: list[StepStats] = field(default_factory=list)

    def __post_init__(self):
        if self.optimizer is None:
            self.optimizer = Adam(self.params.parameters(), self.config.betas)

    def sample(self, rng: np.random.Generator) -> TrainSample:
        cfg = self.config
        base = random_texture(rng, cfg.image_size, cfg.image_size, cfg.texture)
        return synth_pair(base, cfg.warp_magnitude, cfg.photometric_jitter, rng)

    def step(self, sample: TrainSample, rng: np.random.Generator) -> StepStats | None:
        """One optimization step; returns None (sample skipped) when it lacks valid pixels."""
        cfg = self.config
        pa, pb = sample.gt.valid_pairs()
        if len(pa) < max(cfg.anchors_per_pair, cfg.queries_per_pair):
            return None
        try:
            anchors = sample_gt_anchors(sample.gt, cfg.anchors_per_pair, cfg.grid_cells, rng, cfg.max_per_cell)
        except InsufficientDataError:
            return None
        frac, sigma = cfg.noise_at(self.iteration)
        if frac > 0:
            anchors = perturb_anchors(anchors, frac, sigma, sample.image_hw, rng)
        q = rng.choice(len(pa), size=cfg.queries_per_pair, replace=False)
        _, scales = adaptive_scale([anchors.points_a, anchors.points_b], cfg.scale_range, rng)
        lr = cfg.lr_at(self.iteration)
        self.optimizer.zero_grad()
        loss, match = training_loss(self.params, sample, anchors, pa[q], pb[q], cfg, scales)
        loss.backward()
        self.optimizer.step(lr)
        stats = StepStats(
            self.iteration,
            float(loss.data),
            lr,
            float(np.median(np.linalg.norm(to_pixels(match.coarse.data - pb[q], sample.image_hw), axis=1))),
            float(np.median(np.linalg.norm(to_pixels(match.fine.data - pb[q], sample.image_hw), axis=1))),
        )
        self.iteration += 1
        self.history.append(stats)
        return stats


def training_loss(params: ModelParams, sample: TrainSample, anchors: AnchorSet, queries, targets,
                  config: TrainConfig, scales=(None, None)) -> tuple[Tensor, BatchMatch]:
    pyr_a, pyr_b = forward(sample.image_a, sample.image_b, anchors, params, scales)
    match = match_batch(queries, pyr_a, pyr_b, config.window_frac, params.config.normalize_features)
    hc, wc = pyr_b.coarse_updated.shape[1:]
    loss = correspondence_loss(match.coarse, match.fine, match.coarse_distribution, targets,
                               grid_coords(hc, wc), config.sigma_floor)
    return loss, match


def train_step(trainer: Trainer, sample: TrainSample, rng: np.random.Generator) -> StepStats | None:
    return trainer.step(sample, rng)


def train(config: TrainConfig, model_config: ModelConfig | None = None, log_path=None, checkpoint_path=None,
          checkpoint_every: int = 0, params: ModelParams | None = None) -> Trainer:
    """Run ``config.total_iters`` steps on freshly generated synthetic pairs.

    Every iteration draws its data from ``iteration_rng(seed, iteration)``, so
    a run is reproducible from its config alone.
    """
    model_config = model_config or ModelConfig()
    params = params or ModelParams.init(model_config)
    trainer = Trainer(params, config)
    log_fh = open(log_path, "a") if log_path else None
    try:
        attempt = 0
        while trainer.iteration < config.total_iters:
            rng = iteration_rng(config.seed, attempt)
            attempt += 1
            stats = trainer.step(trainer.sample(rng), rng)
            if stats is None:
                continue
            if log_fh:
                log_fh.write(stats.line() + "\n")
                log_fh.flush()
            if stats.iteration % 250 == 0:
                log.info("iter %d loss %.4f coarse %.2fpx fine %.2fpx", stats.iteration, stats.loss,
                         stats.coarse_px, stats.fine_px)
            if checkpoint_path and checkpoint_every and trainer.iteration % checkpoint_every == 0:
                save_checkpoint(params, checkpoint_path, {"train": config.to_dict(), "iteration": trainer.iteration})
    finally:
        if log_fh:
            log_fh.close()
    if checkpoint_path:
        save_checkpoint(params, checkpoint_path, {"train": config.to_dict(), "iteration": trainer.iteration})
    return trainer


def ensure_dir(path) -> None:
    if path and not os.path.isdir(path):
        raise FileNotFoundError(path)
