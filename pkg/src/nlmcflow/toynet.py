"""Toy-scale forward passes of the motion feature aggregation and adaptive attention blocks.

Feature maps are ``C x H x W`` arrays; attention treats the ``H*W`` pixels
as tokens (row-major) with ``C`` channels each. There are no trainable
parameters here: every weight is passed in explicitly.

Conventions:

* LayerNorm normalizes each token over its channels.
* Attention is single-head: ``softmax(Q K^T / sqrt(d)) V`` followed by an
  output projection.
* The previous-state fusion ``P`` averages the channel-concatenated maps
  with a ``pool x pool`` window (stride 1, in-bounds cells only), so
  ``P`` keeps the spatial size of its inputs.
* The adaptive selection scores each token from three per-token features
  (a 1x1 convolution to one channel, channel max, channel mean) with a
  two-layer ReLU MLP, then weights tokens by the softmax of the scores.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np

LN_EPS = 1e-5


class ToyShapeError(ValueError):
    pass


def _finite(name: str, a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    return a


def _shape(name: str, a: np.ndarray, shape: Tuple[int, ...]) -> None:
    if a.shape != shape:
        raise ToyShapeError(f"{name} has shape {a.shape}, expected {shape}")


@dataclass(frozen=True)
class FeatureMap:
    """``values`` is ``C x H x W``; ``level`` is the scale index 1..4.

    A level-``l`` map carries a multiple of ``2**(l-1)`` channels.
    """

    values: np.ndarray
    level: int = 1

    def __post_init__(self):
        v = _finite("feature map", self.values)
        if v.ndim != 3 or min(v.shape) < 1:
            raise ToyShapeError(f"feature map must be a non-empty C x H x W array, got shape {v.shape}")
        if self.level not in (1, 2, 3, 4):
            raise ValueError("level must be in 1..4")
        if v.shape[0] % (2 ** (self.level - 1)):
            raise ToyShapeError(f"level {self.level} needs a multiple of {2 ** (self.level - 1)} channels")
        object.__setattr__(self, "values", v)

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def spatial(self) -> Tuple[int, int]:
        return self.values.shape[1], self.values.shape[2]

    def tokens(self) -> np.ndarray:
        """``(H*W) x C`` token matrix in row-major pixel order."""
        c = self.channels
        return self.values.reshape(c, -1).T

    @classmethod
    def from_tokens(cls, tokens: np.ndarray, height: int, width: int, level: int = 1) -> "FeatureMap":
        return cls(np.ascontiguousarray(tokens.T.reshape(-1, height, width)), level)


@dataclass(frozen=True)
class LayerNormWeights:
    gamma: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        g, b = _finite("gamma", self.gamma), _finite("beta", self.beta)
        if g.ndim != 1 or g.shape != b.shape:
            raise ToyShapeError("layer-norm gamma and beta must be vectors of equal length")
        object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "beta", b)

    @classmethod
    def identity(cls, channels: int) -> "LayerNormWeights":
        return cls(np.ones(channels), np.zeros(channels))


@dataclass(frozen=True)
class AttentionBlockWeights:
    """Weights of one single-head attention block.

    ``wq`` maps query tokens (``Cq`` channels) to ``d``; ``wk`` and ``wv``
    map key/value tokens (``Ckv`` channels) to ``d``; ``wo`` maps ``d`` back
    to ``Cq``. ``ln_q`` and ``ln_kv`` normalize the query and key/value
    inputs.
    """

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    ln_q: LayerNormWeights
    ln_kv: LayerNormWeights

    def __post_init__(self):
        for name in ("wq", "wk", "wv", "wo"):
            a = _finite(name, getattr(self, name))
            if a.ndim != 2:
                raise ToyShapeError(f"{name} must be a matrix")
            object.__setattr__(self, name, a)
        cq, d = self.wq.shape
        ckv = self.wk.shape[0]
        _shape("wk", self.wk, (ckv, d))
        _shape("wv", self.wv, (ckv, d))
        _shape("wo", self.wo, (d, cq))
        _shape("ln_q.gamma", self.ln_q.gamma, (cq,))
        _shape("ln_kv.gamma", self.ln_kv.gamma, (ckv,))

    @property
    def query_channels(self) -> int:
        return self.wq.shape[0]

    @property
    def kv_channels(self) -> int:
        return self.wk.shape[0]


@dataclass(frozen=True)
class SelectionWeights:
    """Token scoring for adaptive selection.

    ``conv_w`` (C,) and ``conv_b`` form the 1x1 convolution to one channel;
    the MLP maps the 3 per-token features through ``w1`` (3 x hidden),
    ``b1``, ReLU, ``w2`` (hidden,) and ``b2`` to a scalar score.
    """

    conv_w: np.ndarray
    conv_b: float
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float

    def __post_init__(self):
        for name in ("conv_w", "w1", "b1", "w2"):
            object.__setattr__(self, name, _finite(name, getattr(self, name)))
        object.__setattr__(self, "conv_b", float(_finite("conv_b", self.conv_b)))
        object.__setattr__(self, "b2", float(_finite("b2", self.b2)))
        if self.conv_w.ndim != 1 or self.w1.ndim != 2 or self.w1.shape[0] != 3:
            raise ToyShapeError("conv_w must be a vector and w1 a 3 x hidden matrix")
        hidden = self.w1.shape[1]
        _shape("b1", self.b1, (hidden,))
        _shape("w2", self.w2, (hidden,))


@dataclass(frozen=True)
class MotionAggregationWeights:
    """``ca_prev`` attends to the fused previous state ``P``, ``ca_first`` to
    the upsampled previous level-1 map; ``conv_w`` is ``C x 2C x k x k``
    (odd ``k``, zero padding) with bias ``conv_b``."""

    ca_prev: AttentionBlockWeights
    ca_first: AttentionBlockWeights
    conv_w: np.ndarray
    conv_b: np.ndarray
    pool: int = 3

    def __post_init__(self):
        w, b = _finite("conv_w", self.conv_w), _finite("conv_b", self.conv_b)
        if w.ndim != 4 or w.shape[2] % 2 == 0 or w.shape[2] != w.shape[3]:
            raise ToyShapeError("conv_w must be C_out x C_in x k x k with odd k")
        _shape("conv_b", b, (w.shape[0],))
        if self.pool < 1 or self.pool % 2 == 0:
            raise ValueError("pool must be a positive odd window")
        object.__setattr__(self, "conv_w", w)
        object.__setattr__(self, "conv_b", b)


@dataclass(frozen=True)
class EnhancementWeights:
    """LayerNorm, 1x1 projections (``C x C`` plus bias) generating Q, K, V,
    one selection block per projection, and the output projection ``wo``."""

    ln: LayerNormWeights
    wq: np.ndarray
    bq: np.ndarray
    wk: np.ndarray
    bk: np.ndarray
    wv: np.ndarray
    bv: np.ndarray
    select_q: SelectionWeights
    select_k: SelectionWeights
    select_v: SelectionWeights
    wo: np.ndarray

    def __post_init__(self):
        c = self.ln.gamma.shape[0]
        for name in ("wq", "wk", "wv", "wo"):
            a = _finite(name, getattr(self, name))
            _shape(name, a, (c, c))
            object.__setattr__(self, name, a)
        for name in ("bq", "bk", "bv"):
            a = _finite(name, getattr(self, name))
            _shape(name, a, (c,))
            object.__setattr__(self, name, a)
        for name in ("select_q", "select_k", "select_v"):
            _shape(f"{name}.conv_w", getattr(self, name).conv_w, (c,))


def layer_norm(tokens: np.ndarray, weights: LayerNormWeights, eps: float = LN_EPS) -> np.ndarray:
    """Normalize each row (token) over its channels, then scale and shift."""
    if tokens.shape[-1] != weights.gamma.shape[0]:
        raise ToyShapeError(f"layer norm expects {weights.gamma.shape[0]} channels, got {tokens.shape[-1]}")
    mu = tokens.mean(axis=-1, keepdims=True)
    var = tokens.var(axis=-1, keepdims=True)
    return (tokens - mu) / np.sqrt(var + eps) * weights.gamma + weights.beta


def softmax(a: np.ndarray, axis: int = -1) -> np.ndarray:
    z = np.exp(a - a.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


def attention(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Scaled dot-product attention on token matrices; returns (output, weights)."""
    if q.shape[1] != k.shape[1] or k.shape[0] != v.shape[0]:
        raise ToyShapeError(f"incompatible attention shapes q{q.shape} k{k.shape} v{v.shape}")
    w = softmax(q @ k.T / np.sqrt(q.shape[1]), axis=1)
    return w @ v, w


def cross_attention(query: np.ndarray, context: np.ndarray, weights: AttentionBlockWeights,
                    return_weights: bool = False):
    """``CA(LN(query), LN(context), LN(context))`` on token matrices, without the residual."""
    if query.shape[1] != weights.query_channels or context.shape[1] != weights.kv_channels:
        raise ToyShapeError(f"attention block expects {weights.query_channels}/{weights.kv_channels} channels, "
                            f"got {query.shape[1]}/{context.shape[1]}")
    qn = layer_norm(query, weights.ln_q)
    kn = layer_norm(context, weights.ln_kv)
    out, w = attention(qn @ weights.wq, kn @ weights.wk, kn @ weights.wv)
    out = out @ weights.wo
    return (out, w) if return_weights else out


def upsample_bilinear(values: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize of a ``C x h x w`` array with half-pixel centres and edge clamping."""
    c, h, w = values.shape

    def axis(n_out, n_in):
        src = np.clip((np.arange(n_out) + 0.5) * n_in / n_out - 0.5, 0, n_in - 1)
        i0 = np.floor(src).astype(int)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, src - i0

    y0, y1, fy = axis(height, h)
    x0, x1, fx = axis(width, w)
    top = values[:, y0][:, :, x0] * (1 - fx) + values[:, y0][:, :, x1] * fx
    bot = values[:, y1][:, :, x0] * (1 - fx) + values[:, y1][:, :, x1] * fx
    return top * (1 - fy)[:, None] + bot * fy[:, None]


def upsample_levels(prev: Sequence[FeatureMap], height: int, width: int) -> Tuple[FeatureMap, ...]:
    """Bring previous multi-scale maps to the level-1 geometry (levels are kept as labels)."""
    return tuple(FeatureMap(upsample_bilinear(f.values, height, width), f.level) for f in prev)


def avg_pool(values: np.ndarray, size: int) -> np.ndarray:
    """Stride-1 ``size x size`` mean over the in-bounds window of each pixel."""
    r = size // 2
    c, h, w = values.shape
    pad = np.pad(values, ((0, 0), (r, r), (r, r)))
    ones = np.pad(np.ones((h, w)), r)
    total = np.zeros_like(values)
    n = np.zeros((h, w))
    for dy in range(size):
        for dx in range(size):
            total += pad[:, dy:dy + h, dx:dx + w]
            n += ones[dy:dy + h, dx:dx + w]
    return total / n


def conv2d(values: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Same-size 2D convolution (cross-correlation) with zero padding."""
    c_out, c_in, k, _ = w.shape
    if values.shape[0] != c_in:
        raise ToyShapeError(f"convolution expects {c_in} input channels, got {values.shape[0]}")
    r = k // 2
    _, h, wd = values.shape
    pad = np.pad(values, ((0, 0), (r, r), (r, r)))
    out = np.broadcast_to(b[:, None, None], (c_out, h, wd)).copy()
    for dy in range(k):
        for dx in range(k):
            out += np.einsum("oc,chw->ohw", w[:, :, dy, dx], pad[:, dy:dy + h, dx:dx + wd])
    return out


def fuse_previous(prev: Sequence[FeatureMap], pool: int = 3) -> np.ndarray:
    """``P = AvgPool(Concat(prev))`` for maps already at a common geometry."""
    shapes = {f.spatial for f in prev}
    if len(shapes) != 1:
        raise ToyShapeError(f"previous levels must share a geometry, got {sorted(shapes)}")
    return avg_pool(np.concatenate([f.values for f in prev], axis=0), pool)


def motion_feature_aggregation(curr: FeatureMap, prev_levels: Sequence[FeatureMap],
                               weights: MotionAggregationWeights) -> FeatureMap:
    """Aggregate the current level-1 map with the (upsampled) previous multi-scale state.

    ``prev_levels`` are the four previous maps in level order, each already
    resampled to ``curr``'s geometry; the first one is the previous level-1 map.
    """
    if len(prev_levels) != 4:
        raise ToyShapeError(f"expected 4 previous levels, got {len(prev_levels)}")
    if any(f.spatial != curr.spatial for f in prev_levels):
        raise ToyShapeError("previous levels must be upsampled to the current geometry")
    h, w = curr.spatial
    f = curr.tokens()
    p = FeatureMap(fuse_previous(prev_levels, weights.pool)).tokens()
    c_hat = cross_attention(f, p, weights.ca_prev) + f
    c_tilde = cross_attention(f, prev_levels[0].tokens(), weights.ca_first) + f
    stacked = np.concatenate([c_hat.T.reshape(-1, h, w), c_tilde.T.reshape(-1, h, w)], axis=0)
    return FeatureMap(conv2d(stacked, weights.conv_w, weights.conv_b), curr.level)


def selection_scores(tokens: np.ndarray, weights: SelectionWeights) -> np.ndarray:
    """One score per token from (1x1 conv, channel max, channel mean)."""
    if tokens.shape[1] != weights.conv_w.shape[0]:
        raise ToyShapeError(f"selection expects {weights.conv_w.shape[0]} channels, got {tokens.shape[1]}")
    feats = np.stack([tokens @ weights.conv_w + weights.conv_b, tokens.max(axis=1), tokens.mean(axis=1)], axis=1)
    hidden = np.maximum(feats @ weights.w1 + weights.b1, 0.0)
    return hidden @ weights.w2 + weights.b2


def adaptive_attention_select(a: np.ndarray, weights: SelectionWeights) -> np.ndarray:
    """``A' = softmax(S) * A + A`` on an ``N x C`` token matrix, softmax over tokens."""
    a = _finite("attention tensor", a)
    if a.ndim != 2:
        raise ToyShapeError("attention tensor must be tokens x channels")
    gate = softmax(selection_scores(a, weights), axis=0)
    return gate[:, None] * a + a


def enhanced_self_attention(r: FeatureMap, weights: EnhancementWeights,
                            return_weights: bool = False):
    """``R' = SA(Q', K', V') + R`` with Q, K, V from LayerNorm and 1x1 projections of ``R``."""
    if r.channels != weights.ln.gamma.shape[0]:
        raise ToyShapeError(f"enhancement expects {weights.ln.gamma.shape[0]} channels, got {r.channels}")
    h, w = r.spatial
    x = r.tokens()
    xn = layer_norm(x, weights.ln)
    q = adaptive_attention_select(xn @ weights.wq + weights.bq, weights.select_q)
    k = adaptive_attention_select(xn @ weights.wk + weights.bk, weights.select_k)
    v = adaptive_attention_select(xn @ weights.wv + weights.bv, weights.select_v)
    out, attn = attention(q, k, v)
    result = FeatureMap.from_tokens(out @ weights.wo + x, h, w, r.level)
    return (result, attn) if return_weights else result


def write_tensor_csv(path: Union[str, Path], a: np.ndarray) -> None:
    """CSV tensor: a ``# shape: d0,d1,...`` line, then the last axis as rows."""
    a = np.asarray(a, dtype=np.float64)
    rows = a.reshape(-1, a.shape[-1]) if a.ndim > 1 else a.reshape(1, -1)
    lines = ["# shape: " + ",".join(str(d) for d in a.shape)]
    lines += [",".join(repr(float(x)) for x in row) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def read_tensor_csv(path: Union[str, Path]) -> np.ndarray:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# shape:"):
        raise ValueError(f"{path}: missing shape header")
    shape = tuple(int(d) for d in lines[0].split(":", 1)[1].split(","))
    data = np.array([float(x) for line in lines[1:] if line.strip() for x in line.split(",")])
    if data.size != int(np.prod(shape)):
        raise ValueError(f"{path}: {data.size} values for shape {shape}")
    return data.reshape(shape)


def random_attention_weights(rng: np.random.Generator, cq: int, ckv: int, d: Optional[int] = None,
                             scale: float = 0.5) -> AttentionBlockWeights:
    """Random attention block, handy for toy experiments and tests."""
    d = cq if d is None else d
    return AttentionBlockWeights(
        rng.normal(0, scale, (cq, d)), rng.normal(0, scale, (ckv, d)), rng.normal(0, scale, (ckv, d)),
        rng.normal(0, scale, (d, cq)),
        LayerNormWeights(1 + rng.normal(0, 0.1, cq), rng.normal(0, 0.1, cq)),
        LayerNormWeights(1 + rng.normal(0, 0.1, ckv), rng.normal(0, 0.1, ckv)))


def random_selection_weights(rng: np.random.Generator, c: int, hidden: int = 4,
                             scale: float = 0.5) -> SelectionWeights:
    return SelectionWeights(rng.normal(0, scale, c), float(rng.normal(0, scale)),
                            rng.normal(0, scale, (3, hidden)), rng.normal(0, scale, hidden),
                            rng.normal(0, scale, hidden), float(rng.normal(0, scale)))


def random_enhancement_weights(rng: np.random.Generator, c: int, hidden: int = 4,
                               scale: float = 0.5) -> EnhancementWeights:
    m = lambda: rng.normal(0, scale, (c, c))  # noqa: E731
    bvec = lambda: rng.normal(0, 0.1, c)  # noqa: E731
    return EnhancementWeights(
        LayerNormWeights(1 + rng.normal(0, 0.1, c), rng.normal(0, 0.1, c)),
        m(), bvec(), m(), bvec(), m(), bvec(),
        random_selection_weights(rng, c, hidden, scale), random_selection_weights(rng, c, hidden, scale),
        random_selection_weights(rng, c, hidden, scale), m())


def random_aggregation_weights(rng: np.random.Generator, c1: int, kernel: int = 3,
                               scale: float = 0.5) -> MotionAggregationWeights:
    c_prev = c1 * (1 + 2 + 4 + 8)
    return MotionAggregationWeights(
        random_attention_weights(rng, c1, c_prev, scale=scale),
        random_attention_weights(rng, c1, c1, scale=scale),
        rng.normal(0, scale / kernel, (c1, 2 * c1, kernel, kernel)), rng.normal(0, 0.1, c1))
