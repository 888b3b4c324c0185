"""Backbone, propagation and refinement modules plus checkpoint I/O."""

from __future__ import annotations

import json
import os
import struct
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .anchors import AnchorSet
from .errors import (
    ConfigurationError,
    EmptyAnchorError,
    MagicMismatchError,
    ShapeError,
    TruncatedCheckpointError,
    VersionMismatchError,
)
from .layers import (
    MLP,
    AttentionParams,
    InterParams,
    NodeBatch,
    glorot,
    inter_points_pass,
    intra_points_pass,
    points_to_image_pass,
    zeros,
)
from .numerics import Tensor, bilinear_sample, bilinear_upsample, concat, conv2d, make_rng, relu
from .posenc import PosEncodingConfig, sincos_2d


@dataclass(frozen=True)
class ModelConfig:
    coarse_dim: int = 64
    fine_dim: int = 32
    stem_widths: tuple[int, int] = (16, 32)
    coarse_stride: int = 8
    fine_stride: int = 2
    n_layers: int = 4
    heads: int = 4
    pos_dim: int = 32
    pos_temperature: float = 10000.0
    use_graph: bool = True
    use_inter: bool = True
    use_intra: bool = True
    literal_residual: bool = False
    normalize_features: bool = False
    init_seed: int = 0

    def __post_init__(self):
        if self.n_layers < 1:
            raise ConfigurationError("n_layers must be >= 1")
        if self.coarse_dim % self.heads:
            raise ConfigurationError("coarse_dim must be divisible by heads")
        if self.fine_stride not in (2, 4):
            raise ConfigurationError("fine_stride must be 2 or 4")
        if self.coarse_stride % (2 * self.fine_stride):
            raise ConfigurationError("coarse_stride must be a multiple of 2 * fine_stride")
        object.__setattr__(self, "stem_widths", tuple(self.stem_widths))

    @property
    def pos_config(self) -> PosEncodingConfig:
        return PosEncodingConfig(dim=self.pos_dim, temperature=self.pos_temperature)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stem_widths"] = list(self.stem_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class FeaturePyramid:
    coarse: Tensor
    fine: Tensor
    image_hw: tuple[int, int]
    coarse_updated: Tensor | None = None
    fine_updated: Tensor | None = None


@dataclass
class ModelParams:
    """Named parameter tensors; structured views are built on demand."""

    config: ModelConfig
    tensors: dict[str, Tensor] = field(default_factory=dict)

    @classmethod
    def init(cls, config: ModelConfig, seed: int | None = None) -> "ModelParams":
        rng = make_rng(config.init_seed if seed is None else seed)
        t: dict[str, Tensor] = {}
        w1, w2 = config.stem_widths
        dc, df = config.coarse_dim, config.fine_dim

        def conv(name, cin, cout, k=3):
            t[f"{name}.w"] = glorot(rng, cin * k * k, cout * k * k, (cout, cin, k, k))
            t[f"{name}.b"] = zeros((cout,))

        conv("backbone.conv1", 3, w1)
        conv("backbone.conv2", w1, w2)
        conv("backbone.fine_head", w2, df)
        conv("backbone.conv3", w2, w2)
        conv("backbone.conv4", w2, dc)
        conv("backbone.coarse_head", dc, dc)
        dp = config.pos_dim
        for layer in range(config.n_layers):
            for k, v in InterParams.init(rng, dc, dp).tensors().items():
                t[f"inter.{layer}.{k}"] = v
            for k, v in AttentionParams.init(rng, dc, dp, config.heads).tensors().items():
                t[f"intra.{layer}.{k}"] = v
        for k, v in AttentionParams.init(rng, dc, dp, config.heads).tensors().items():
            t[f"p2i.{k}"] = v
        conv("refine", dc + df, df)
        # residual branches start at zero so propagation is the identity at init
        for name, v in t.items():
            if name.endswith((".wout", ".ffn.w2", ".corr.w2")):
                v.data[...] = 0.0
        return cls(config, t)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def parameters(self) -> list[Tensor]:
        return list(self.tensors.values())

    def group(self, prefix: str) -> dict[str, Tensor]:
        return {k: v for k, v in self.tensors.items() if k.startswith(prefix)}

    def _mlp(self, prefix):
        return MLP(*(self.tensors[f"{prefix}.{n}"] for n in ("w1", "b1", "w2", "b2")))

    def inter(self, layer: int) -> InterParams:
        return InterParams(self._mlp(f"inter.{layer}.corr"))

    def attention(self, prefix: str) -> AttentionParams:
        g = self.tensors
        return AttentionParams(g[f"{prefix}.wq"], g[f"{prefix}.wk"], g[f"{prefix}.wv"], g[f"{prefix}.wout"],
                               self._mlp(f"{prefix}.ffn"), self.config.heads)

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: Tensor(v.data.copy(), requires_grad=True) for k, v in self.tensors.items()})


# ---------------------------------------------------------------------------
# forward pass
# ---------------------------------------------------------------------------


def _conv(params: ModelParams, name: str, x: Tensor, stride: int = 1) -> Tensor:
    return conv2d(x, params[f"{name}.w"], params[f"{name}.b"], stride=stride)


def encode_backbone(image: Tensor, params: ModelParams) -> tuple[Tensor, Tensor]:
    """Return ``(coarse, fine)`` feature maps at 1/coarse_stride and 1/fine_stride."""
    cfg = params.config
    if not isinstance(image, Tensor):
        image = Tensor(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ShapeError(f"expected a [3, H, W] image, got {image.shape}")
    _, h, w = image.shape
    if h % cfg.coarse_stride or w % cfg.coarse_stride:
        raise ShapeError(f"image size {h}x{w} must be divisible by {cfg.coarse_stride}")
    x = relu(_conv(params, "backbone.conv1", image, 2))
    trunk = relu(_conv(params, "backbone.conv2", x, cfg.fine_stride // 2))
    fine = _conv(params, "backbone.fine_head", trunk)
    x = relu(_conv(params, "backbone.conv3", trunk, 2))
    x = relu(_conv(params, "backbone.conv4", x, cfg.coarse_stride // (2 * cfg.fine_stride)))
    coarse = _conv(params, "backbone.coarse_head", x)
    return coarse, fine


def grid_coords(h: int, w: int) -> np.ndarray:
    """Normalized ``(u, v)`` of every node of an ``h x w`` map, row-major."""
    u = np.arange(w) / max(w - 1, 1)
    v = np.arange(h) / max(h - 1, 1)
    uu, vv = np.meshgrid(u, v)
    return np.stack([uu.ravel(), vv.ravel()], axis=1)


def _scale(scale):
    return np.ones(2) if scale is None else np.asarray(scale, dtype=np.float64)


def propagate(coarse_a: Tensor, coarse_b: Tensor, anchors: AnchorSet, params: ModelParams,
              scales=(None, None)) -> tuple[Tensor, Tensor]:
    """Run the anchor message-passing stack and broadcast into both coarse maps.

    ``scales`` are per-image coordinate scales applied before position
    encoding (identity at inference).
    """
    cfg = params.config
    if anchors is None or len(anchors) == 0:
        raise EmptyAnchorError("propagation needs at least one anchor")
    if not cfg.use_graph:
        return coarse_a, coarse_b
    pcfg = cfg.pos_config
    sa, sb = _scale(scales[0]), _scale(scales[1])
    za = NodeBatch(bilinear_sample(coarse_a, anchors.points_a), anchors.points_a, sincos_2d(anchors.points_a * sa, pcfg))
    zb = NodeBatch(bilinear_sample(coarse_b, anchors.points_b), anchors.points_b, sincos_2d(anchors.points_b * sb, pcfg))
    for layer in range(cfg.n_layers):
        if cfg.use_inter:
            za, zb = inter_points_pass(za, zb, params.inter(layer))
        if cfg.use_intra:
            intra = params.attention(f"intra.{layer}")
            za = intra_points_pass(za, intra, cfg.literal_residual)
            zb = intra_points_pass(zb, intra, cfg.literal_residual)
    p2i = params.attention("p2i")
    out = []
    for fmap, anchor_nodes, s in ((coarse_a, za, sa), (coarse_b, zb, sb)):
        d, h, w = fmap.shape
        coords = grid_coords(h, w)
        nodes = NodeBatch(fmap.reshape(d, h * w).T, coords, sincos_2d(coords * s, pcfg))
        updated = points_to_image_pass(anchor_nodes, nodes, p2i, cfg.literal_residual)
        out.append(updated.attributes.T.reshape(d, h, w))
    return out[0], out[1]


def refine(coarse_updated: Tensor, fine: Tensor, params: ModelParams) -> Tensor:
    """Upsample coarse features, stack them on the fine map and apply one convolution."""
    dc, hc, wc = coarse_updated.shape
    df, hf, wf = fine.shape
    ratio = params.config.coarse_stride // params.config.fine_stride
    if (hf, wf) != (hc * ratio, wc * ratio):
        raise ShapeError(f"fine map {hf}x{wf} is not {ratio}x coarse map {hc}x{wc}")
    up = bilinear_upsample(coarse_updated, (hf, wf))
    return _conv(params, "refine", concat([up, fine], axis=0))


def forward(image_a, image_b, anchors: AnchorSet, params: ModelParams,
            scales=(None, None)) -> tuple[FeaturePyramid, FeaturePyramid]:
    pyramids = []
    for img in (image_a, image_b):
        img = img if isinstance(img, Tensor) else Tensor(img)
        coarse, fine = encode_backbone(img, params)
        pyramids.append(FeaturePyramid(coarse, fine, tuple(img.shape[1:])))
    pa, pb = pyramids
    pa.coarse_updated, pb.coarse_updated = propagate(pa.coarse, pb.coarse, anchors, params, scales)
    pa.fine_updated = refine(pa.coarse_updated, pa.fine, params)
    pb.fine_updated = refine(pb.coarse_updated, pb.fine, params)
    return pa, pb


# ---------------------------------------------------------------------------
# checkpoint container
#
#   magic  b"ANCHMTCH"
#   u32    version
#   u32    config length, then that many bytes of UTF-8 JSON
#   u32    record count
#   per record: u16 name length, name bytes, u8 ndim, ndim x u32 dims,
#               prod(dims) x float64 little-endian
#   every integer is little-endian
# ---------------------------------------------------------------------------

MAGIC = b"ANCHMTCH"
VERSION = 1


def dump_checkpoint(params: ModelParams, extra: dict | None = None) -> bytes:
    cfg = params.config.to_dict()
    if extra:
        cfg = {"model": cfg, **extra}
    else:
        cfg = {"model": cfg}
    blob = json.dumps(cfg, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<II", VERSION, len(blob)), blob, struct.pack("<I", len(params.tensors))]
    for name, t in params.tensors.items():
        nb = name.encode()
        parts.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", t.ndim))
        parts.append(struct.pack(f"<{t.ndim}I", *t.shape))
        parts.append(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    return b"".join(parts)


def parse_checkpoint(buf: bytes) -> tuple[ModelParams, dict]:
    view = memoryview(buf)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise TruncatedCheckpointError(f"checkpoint truncated at byte {pos} (needed {n} more)")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if bytes(take(len(MAGIC))) != MAGIC:
        raise MagicMismatchError("not a checkpoint file (bad magic)")
    version, clen = struct.unpack("<II", take(8))
    if version != VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, expected {VERSION}")
    meta = json.loads(bytes(take(clen)).decode())
    (count,) = struct.unpack("<I", take(4))
    tensors: dict[str, Tensor] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = bytes(take(nlen)).decode()
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        n = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(take(8 * n), dtype="<f8").astype(np.float64).reshape(shape)
        tensors[name] = Tensor(data, requires_grad=True)
    if pos != len(view):
        raise TruncatedCheckpointError("trailing bytes after last record")
    return ModelParams(ModelConfig.from_dict(meta["model"]), tensors), meta


def save_checkpoint(params: ModelParams, path, extra: dict | None = None) -> None:
    """Write ``params`` atomically (temp file + rename)."""
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(dump_checkpoint(params, extra))
    os.replace(tmp, path)


def load_checkpoint(path) -> ModelParams:
    with open(path, "rb") as fh:
        params, _ = parse_checkpoint(fh.read())
    return params


def variant_config(config: ModelConfig, **overrides) -> ModelConfig:
    return replace(config, **overrides)
