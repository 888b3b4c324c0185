"""2D sinusoidal position embeddings and random-scale coordinate augmentation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class PosEncodingConfig:
    dim: int = 32
    temperature: float = 10000.0
    scale_range: tuple[float, float] = (0.5, 2.0)

    def __post_init__(self):
        if self.dim <= 0 or self.dim % 4:
            raise ConfigurationError(f"position embedding dim must be a positive multiple of 4, got {self.dim}")
        lo, hi = self.scale_range
        if not 0 < lo <= hi:
            raise ConfigurationError(f"invalid scale range {self.scale_range}")


def frequencies(config: PosEncodingConfig) -> np.ndarray:
    half = config.dim // 2
    i = np.arange(half // 2)
    return 2 * np.pi / config.temperature ** (2 * i / half)


def sincos_2d(coords, config: PosEncodingConfig) -> np.ndarray:
    """Embed normalized ``(u, v)`` points as ``[K, dim]``.

    The first ``dim/2`` channels encode ``u`` and the rest ``v``; inside each
    half, channel ``2i`` is ``sin(w_i c)`` and ``2i + 1`` is ``cos(w_i c)``.
    """
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
    w = frequencies(config)
    out = np.empty((len(coords), config.dim))
    half = config.dim // 2
    for axis in range(2):
        phase = coords[:, axis : axis + 1] * w[None, :]
        block = out[:, axis * half : (axis + 1) * half]
        block[:, 0::2] = np.sin(phase)
        block[:, 1::2] = np.cos(phase)
    return out


def draw_scale(scale_range, rng: np.random.Generator) -> np.ndarray:
    """Log-uniform per-axis scale in ``scale_range``."""
    lo, hi = scale_range
    if not 0 < lo <= hi:
        raise ConfigurationError(f"invalid scale range {scale_range}")
    if lo == hi:
        return np.array([lo, lo], dtype=np.float64)
    return np.exp(rng.uniform(np.log(lo), np.log(hi), size=2))


def adaptive_scale(coords, scale_range, rng: np.random.Generator, per_image: bool = True):
    """Scale each image's coordinates componentwise by a random ``(r1, r2)``.

    ``coords`` is a sequence with one ``(N, 2)`` array per image. Returns the
    scaled arrays and the scale pair applied to each image. With
    ``per_image=False`` a single pair is shared by all images.
    """
    out, scales = [], []
    shared = None if per_image else draw_scale(scale_range, rng)
    for c in coords:
        r = shared if shared is not None else draw_scale(scale_range, rng)
        out.append(np.asarray(c, dtype=np.float64) * r)
        scales.append(r)
    return out, scales
