"""Message-passing layers over the anchor/image graph.

Three edge families share one generic update: messages are computed along
edges, summed at the target node and folded into its attributes. The
inter-points layer uses a per-pair MLP on the two paired anchors; the
intra-points and points-to-image layers use multi-head attention.

Node attributes are row matrices ``[N, d]``. Position embeddings are
concatenated to the attributes before the query/key projections (and to
both inputs of the inter-points MLP) but never enter the value stream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, PairingError
from .numerics import Tensor, concat, mac_tag, relu, softmax


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True)


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


@dataclass
class MLP:
    """Two-layer perceptron ``relu(x W1 + b1) W2 + b2``."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @classmethod
    def init(cls, rng, d_in: int, d_hidden: int, d_out: int) -> "MLP":
        return cls(
            glorot(rng, d_in, d_hidden, (d_in, d_hidden)),
            zeros((d_hidden,)),
            glorot(rng, d_hidden, d_out, (d_hidden, d_out)),
            zeros((d_out,)),
        )

    def __call__(self, x: Tensor) -> Tensor:
        return relu(x @ self.w1 + self.b1) @ self.w2 + self.b2

    def tensors(self) -> dict[str, Tensor]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


@dataclass
class InterParams:
    corr: MLP

    @classmethod
    def init(cls, rng, d: int, d_pos: int) -> "InterParams":
        return cls(MLP.init(rng, 2 * (d + d_pos), 2 * d, d))

    def tensors(self) -> dict[str, Tensor]:
        return {f"corr.{k}": v for k, v in self.corr.tensors().items()}


@dataclass
class AttentionParams:
    """Projections ``[d (+ d_pos), heads * d_k]`` and the feed-forward block."""

    wq: Tensor
    wk: Tensor
    wv: Tensor
    wout: Tensor
    ffn: MLP
    heads: int

    @classmethod
    def init(cls, rng, d: int, d_pos: int, heads: int, d_k: int | None = None) -> "AttentionParams":
        d_k = d_k or d // heads
        hk = heads * d_k
        return cls(
            glorot(rng, d + d_pos, hk, (d + d_pos, hk)),
            glorot(rng, d + d_pos, hk, (d + d_pos, hk)),
            glorot(rng, d, hk, (d, hk)),
            glorot(rng, hk, d, (hk, d)),
            MLP.init(rng, d, 2 * d, d),
            heads,
        )

    @property
    def d_k(self) -> int:
        return self.wq.shape[1] // self.heads

    def tensors(self) -> dict[str, Tensor]:
        out = {"wq": self.wq, "wk": self.wk, "wv": self.wv, "wout": self.wout}
        out.update({f"ffn.{k}": v for k, v in self.ffn.tensors().items()})
        return out


class NodeBatch:
    """Attributes ``[N, d]`` of a node set, its coordinates and position embeddings."""

    __slots__ = ("attributes", "coords", "pos")

    def __init__(self, attributes: Tensor, coords, pos):
        coords = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
        pos = np.asarray(pos, dtype=np.float64)
        if attributes.shape[0] != len(coords) or len(pos) != len(coords):
            raise ConfigurationError(
                f"node batch rows disagree: attributes {attributes.shape[0]}, coords {len(coords)}, embeddings {len(pos)}"
            )
        self.attributes = attributes
        self.coords = coords
        self.pos = Tensor(pos)

    def __len__(self):
        return self.attributes.shape[0]

    def with_attributes(self, attributes: Tensor) -> "NodeBatch":
        out = NodeBatch.__new__(NodeBatch)
        out.attributes, out.coords, out.pos = attributes, self.coords, self.pos
        return out


def inter_points_pass(z_x: NodeBatch, z_y: NodeBatch, params: InterParams) -> tuple[NodeBatch, NodeBatch]:
    """Update each anchor from its counterpart: ``z_r + F([z_s, p_s, z_r, p_r])``.

    The same MLP serves both directions, so swapping the two lists swaps the
    outputs.
    """
    if len(z_x) != len(z_y):
        raise PairingError(f"inter-points layer needs paired anchors, got {len(z_x)} and {len(z_y)}")
    with mac_tag("edge"):
        to_x = params.corr(concat([z_y.attributes, z_y.pos, z_x.attributes, z_x.pos], axis=1))
        to_y = params.corr(concat([z_x.attributes, z_x.pos, z_y.attributes, z_y.pos], axis=1))
    return z_x.with_attributes(z_x.attributes + to_x), z_y.with_attributes(z_y.attributes + to_y)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    n, hk = x.shape
    return x.reshape(n, heads, hk // heads).transpose(1, 0, 2)


def attention_pass(queries: NodeBatch, keys_values: NodeBatch, params: AttentionParams,
                   literal_residual: bool = False, return_attention: bool = False):
    """Multi-head attention update of ``queries`` from ``keys_values``.

    ``h = z_r + W_out [sum_s A^h_{s,r} V^h_s]_h`` with ``A`` a softmax over
    sources of ``K^T Q / sqrt(d_k)``. The output is ``h + F_out(h)``, or
    ``F_out(h)`` when ``literal_residual`` is set.
    """
    d = params.wv.shape[0]
    if queries.attributes.shape[1] != d or keys_values.attributes.shape[1] != d:
        raise ConfigurationError("node width does not match attention parameters")
    if queries.pos.shape[1] + d != params.wq.shape[0] or keys_values.pos.shape[1] + d != params.wk.shape[0]:
        raise ConfigurationError("position embedding width does not match attention parameters")
    h = params.heads
    zr = queries.attributes
    with mac_tag("node"):
        q = _split_heads(concat([zr, queries.pos], axis=1) @ params.wq, h)
        k = _split_heads(concat([keys_values.attributes, keys_values.pos], axis=1) @ params.wk, h)
        v = _split_heads(keys_values.attributes @ params.wv, h)
    with mac_tag("edge"):
        logits = (q @ k.transpose(0, 2, 1)) / np.sqrt(params.d_k)
        attn = softmax(logits, axis=-1)  # [h, R, S]
        agg = attn @ v  # [h, R, d_k]
    with mac_tag("node"):
        merged = agg.transpose(1, 0, 2).reshape(len(queries), h * params.d_k)
        hidden = zr + merged @ params.wout
        out = params.ffn(hidden) if literal_residual else hidden + params.ffn(hidden)
    result = queries.with_attributes(out)
    if return_attention:
        return result, attn.data
    return result


def intra_points_pass(z: NodeBatch, params: AttentionParams, literal_residual: bool = False, return_attention=False):
    """Self-attention among the anchors of one image (self-edges included)."""
    return attention_pass(z, z, params, literal_residual, return_attention)


def points_to_image_pass(anchors: NodeBatch, image_nodes: NodeBatch, params: AttentionParams,
                         literal_residual: bool = False, return_attention=False):
    """Broadcast anchor context to image nodes; anchors are left untouched."""
    return attention_pass(image_nodes, anchors, params, literal_residual, return_attention)
