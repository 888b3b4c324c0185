"""Small define-by-run tensor engine with reverse-mode gradients.

Only the operations the correspondence network needs are provided. Every
value is a float64 numpy array; a tape is recorded implicitly as operations
run, and :meth:`Tensor.backward` walks it in reverse topological order.
"""

from __future__ import annotations

import contextlib
from collections import Counter
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Tensor",
    "MacCounter",
    "as_tensor",
    "bilinear_sample",
    "bilinear_upsample",
    "concat",
    "conv2d",
    "count_macs",
    "detach",
    "finite_difference_check",
    "l2_normalize",
    "mac_tag",
    "make_rng",
    "matmul",
    "norm",
    "relu",
    "softmax",
    "split_rng",
]


def make_rng(seed: int) -> np.random.Generator:
    """Return a PCG64 generator for ``seed``.

    PCG64 output is fixed by numpy's stream-compatibility policy, so a seed
    reproduces the same sequence on every platform. Child streams come from
    :func:`split_rng`, which uses ``SeedSequence`` spawning.
    """
    return np.random.Generator(np.random.PCG64(seed))


def split_rng(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    return rng.spawn(n)


# ---------------------------------------------------------------------------
# multiply-accumulate instrumentation
# ---------------------------------------------------------------------------


class MacCounter:
    """Accumulates multiply-accumulate counts per tag."""

    def __init__(self):
        self.counts: Counter[str] = Counter()

    def add(self, tag: str, n: int) -> None:
        self.counts[tag] += int(n)

    def total(self) -> int:
        return sum(self.counts.values())

    def __getitem__(self, tag: str) -> int:
        return self.counts[tag]


_counters: list[MacCounter] = []
_tag = ["other"]


@contextlib.contextmanager
def count_macs():
    counter = MacCounter()
    _counters.append(counter)
    try:
        yield counter
    finally:
        _counters.remove(counter)


@contextlib.contextmanager
def mac_tag(tag: str):
    prev = _tag[0]
    _tag[0] = tag
    try:
        yield
    finally:
        _tag[0] = prev


def _record_macs(n: int) -> None:
    for c in _counters:
        c.add(_tag[0], n)


# ---------------------------------------------------------------------------
# Tensor
# ---------------------------------------------------------------------------


class Tensor:
    """Dense float64 array that optionally participates in the gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "_prev", "_backward")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, _prev=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad and not _prev else None
        self._prev: tuple[Tensor, ...] = tuple(_prev)
        self._backward: Callable | None = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return not self._prev

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        if self.requires_grad and self.is_leaf:
            self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                if node.requires_grad:
                    node.grad = node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._prev, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # operator sugar -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, -as_tensor(other))

    def __rsub__(self, other):
        return add(as_tensor(other), -self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return tsum(self, axis=axis, keepdims=keepdims) * (1.0 / n)


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._prev:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents: Sequence[Tensor], backward) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _prev=parents, _backward=backward)
    return Tensor(data)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def detach(x: Tensor) -> Tensor:
    return Tensor(x.data)


# ---------------------------------------------------------------------------
# elementwise and structural ops
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(a.data * b.data, (a, b), backward)


def matmul(a, b) -> Tensor:
    """Batched matrix product with numpy ``matmul`` semantics (operands rank >= 2)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must have rank >= 2")
    out = np.matmul(a.data, b.data)
    _record_macs(out.size * a.shape[-1])

    def backward(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape) if b.requires_grad else None
        return ga, gb

    return _result(out, (a, b), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g):
        return (g * mask,)

    return _result(np.where(mask, x.data, 0.0), (x,), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along ``axis`` (max-subtracted)."""
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise ValueError(f"axis {axis} out of range for rank {x.ndim}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _result(s, (x,), backward)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def reshape(x: Tensor, shape) -> Tensor:
    def backward(g):
        return (g.reshape(x.shape),)

    return _result(x.data.reshape(shape), (x,), backward)


def transpose(x: Tensor, axes=None) -> Tensor:
    inv = None if axes is None else np.argsort(axes)

    def backward(g):
        return (np.transpose(g, inv),)

    return _result(np.transpose(x.data, axes), (x,), backward)


def tsum(x: Tensor, axis=None, keepdims=False) -> Tensor:
    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result(x.data.sum(axis=axis, keepdims=keepdims), (x,), backward)


def index(x: Tensor, key) -> Tensor:
    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, key, g)
        return (full,)

    return _result(x.data[key], (x,), backward)


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    n = np.sqrt((x.data**2).sum(axis=axis, keepdims=True)) + eps
    y = x.data / n

    def backward(g):
        return ((g - y * (g * y).sum(axis=axis, keepdims=True)) / n,)

    return _result(y, (x,), backward)


def norm(x: Tensor, axis: int = -1) -> Tensor:
    """Euclidean norm along ``axis``; the gradient at the origin is taken as 0."""
    n = np.sqrt((x.data**2).sum(axis=axis))

    def backward(g):
        safe = np.where(n > 0, n, 1.0)
        scale = np.where(n > 0, g / safe, 0.0)
        return (np.expand_dims(scale, axis) * x.data,)

    return _result(n, (x,), backward)


# ---------------------------------------------------------------------------
# convolution and resampling
# ---------------------------------------------------------------------------


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    c = xp.shape[0]
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    win = win[:, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    # (C, Ho, Wo, kh, kw) -> (C*kh*kw, Ho*Wo)
    return np.ascontiguousarray(win.transpose(0, 3, 4, 1, 2)).reshape(c * kh * kw, ho * wo)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int | None = None) -> Tensor:
    """2D cross-correlation of one image ``x[C, H, W]`` with ``w[O, C, kh, kw]``.

    Zero padding defaults to ``kh // 2`` so stride 1 preserves size and stride
    2 halves even sizes exactly.
    """
    c, h, wd = x.shape
    o, c2, kh, kw = w.shape
    if c != c2:
        raise ValueError(f"conv2d channel mismatch: input {c}, kernel {c2}")
    p = kh // 2 if padding is None else padding
    ho = (h + 2 * p - kh) // stride + 1
    wo = (wd + 2 * p - kw) // stride + 1
    xp = np.pad(x.data, ((0, 0), (p, p), (p, p))) if p else x.data
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    wmat = w.data.reshape(o, -1)
    out = wmat @ cols
    _record_macs(out.size * cols.shape[0])
    if b is not None:
        out = out + b.data[:, None]
    out = out.reshape(o, ho, wo)
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        g2 = g.reshape(o, ho * wo)
        gw = (g2 @ cols.T).reshape(w.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (wmat.T @ g2).reshape(c, kh, kw, ho, wo)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride] += gcols[:, i, j]
            gx = gxp[:, p : p + h, p : p + wd] if p else gxp
        grads = [gx, gw]
        if b is not None:
            grads.append(g2.sum(axis=1))
        return tuple(grads)

    return _result(out, parents, backward)


def interpolation_matrix(points: np.ndarray, h: int, w: int) -> sp.csr_matrix:
    """Sparse (K, h*w) bilinear weights for normalized ``(u, v)`` points.

    ``u`` runs along the width and ``v`` along the height; grid node ``(i, j)``
    (row, column) sits at ``(j / (w - 1), i / (h - 1))`` (align-corners).
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if points.size and (np.any(points < 0.0) or np.any(points > 1.0) or not np.all(np.isfinite(points))):
        raise ValueError("bilinear sample points must lie in [0, 1]^2")
    px = points[:, 0] * (w - 1)
    py = points[:, 1] * (h - 1)
    x0 = np.clip(np.floor(px).astype(np.int64), 0, max(w - 2, 0))
    y0 = np.clip(np.floor(py).astype(np.int64), 0, max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = px - x0
    fy = py - y0
    k = len(points)
    rows = np.repeat(np.arange(k), 4)
    cols = np.stack([y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1], axis=1).ravel()
    vals = np.stack([(1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx], axis=1).ravel()
    return sp.csr_matrix((vals, (rows, cols)), shape=(k, h * w))


def bilinear_sample(fmap: Tensor, points) -> Tensor:
    """Sample ``fmap[d, H, W]`` at normalized points, returning ``[K, d]``."""
    if fmap.ndim != 3:
        raise ValueError("bilinear_sample expects a rank-3 map")
    d, h, w = fmap.shape
    m = interpolation_matrix(points, h, w)
    flat = fmap.data.reshape(d, h * w)
    out = np.asarray(m @ flat.T)

    def backward(g):
        return (np.asarray(m.T @ g).T.reshape(fmap.shape),)

    return _result(out, (fmap,), backward)


def _resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    if n_out == 1 or n_in == 1:
        pos = np.zeros(n_out)
    else:
        pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    i0 = np.clip(np.floor(pos).astype(np.int64), 0, max(n_in - 2, 0))
    i1 = np.minimum(i0 + 1, n_in - 1)
    f = pos - i0
    r = np.zeros((n_out, n_in))
    np.add.at(r, (np.arange(n_out), i0), 1 - f)
    np.add.at(r, (np.arange(n_out), i1), f)
    return r


def bilinear_upsample(fmap: Tensor, out_hw: tuple[int, int]) -> Tensor:
    """Align-corners bilinear resize of ``fmap[d, H, W]`` to ``out_hw``."""
    d, h, w = fmap.shape
    ho, wo = out_hw
    ry = _resize_matrix(h, ho)
    rx = _resize_matrix(w, wo)
    out = np.matmul(ry, fmap.data @ rx.T)

    def backward(g):
        return (np.matmul(ry.T, g) @ rx,)

    return _result(out, (fmap,), backward)


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------


def finite_difference_check(f: Callable[[], Tensor], leaves: Iterable[Tensor], epsilon: float = 1e-6) -> float:
    """Compare tape gradients of scalar ``f()`` against central differences.

    Returns the maximum over all leaf entries of
    ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)``.
    """
    if not 1e-7 <= epsilon <= 1e-4:
        raise ValueError("epsilon must lie in [1e-7, 1e-4]")
    leaves = list(leaves)
    for leaf in leaves:
        if not leaf.requires_grad:
            raise ValueError("finite_difference_check leaves must require grad")
        leaf.zero_grad()
    out = f()
    if out.data.size != 1 or not np.isfinite(out.data).all():
        raise FloatingPointError("f must return a finite scalar")
    out.backward()
    worst = 0.0
    for leaf in leaves:
        analytic = leaf.grad.copy()
        flat = leaf.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            fp = float(f().data)
            flat[i] = orig - epsilon
            fm = float(f().data)
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise FloatingPointError("f produced a non-finite value")
            numeric = (fp - fm) / (2 * epsilon)
            a = analytic.reshape(-1)[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
