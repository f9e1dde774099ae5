"""Bi-temporal cross attention and the multi-scale query decoder.

The attention between the two temporal feature maps carries no learned
projections: queries come straight from the "before" features plus a fixed
sine position table, keys and values from the "after" features plus the same
table. Two switches select the variant:

* ``cosine``: row-normalize queries and keys so logits are cosine
  similarities (no extra scaling); otherwise plain dot products scaled by
  1/sqrt(C).
* ``subtract``: form the output as Q - attn @ V instead of Q + attn @ V,
  turning the attended context into a relational difference signal.

Category queries (one per class) are then refined at each scale by a decoder
layer: cross attention from the queries into the relational features, plus a
three-linear feed-forward block, with post-normalization around each
sub-block. Only the query embeddings chain across scales, coarse to fine.
"""

from __future__ import annotations

import math

import numpy as np

from .nn import Dropout, LayerNorm, Linear, Module, Parameter
from .tensor import (
    ConfigError,
    ShapeError,
    Tensor,
    dropout,
    l2_normalize_rows,
    matmul,
    relu,
    reshape,
    softmax_lastdim,
    transpose,
)

_POS_CACHE: dict[tuple[int, int, int], np.ndarray] = {}


def sine_position_encoding(h: int, w: int, c: int) -> np.ndarray:
    """Fixed sine/cosine table over a 2-D grid, shape (h*w, c).

    Row-major pixel order; the first c/2 features encode the y coordinate,
    the rest x. Coordinates are normalized to (0, 2*pi] and divided by a
    temperature-10000 frequency ladder, so every entry lies in [-1, 1].
    """
    if c % 4 != 0:
        raise ConfigError(f"encoding width must be divisible by 4, got {c}")
    key = (h, w, c)
    cached = _POS_CACHE.get(key)
    if cached is not None:
        return cached
    half = c // 2
    ys = (np.arange(h) + 1.0) / h * (2.0 * math.pi)
    xs = (np.arange(w) + 1.0) / w * (2.0 * math.pi)
    ladder = 10000.0 ** (2.0 * (np.arange(half) // 2) / half)
    y_phase = ys[:, None] / ladder[None, :]            # (h, half)
    x_phase = xs[:, None] / ladder[None, :]            # (w, half)
    y_enc = np.where(np.arange(half) % 2 == 0, np.sin(y_phase), np.cos(y_phase))
    x_enc = np.where(np.arange(half) % 2 == 0, np.sin(x_phase), np.cos(x_phase))
    table = np.empty((h, w, c))
    table[:, :, :half] = y_enc[:, None, :]
    table[:, :, half:] = x_enc[None, :, :]
    table = table.reshape(h * w, c)
    _POS_CACHE[key] = table
    return table


def tokens_from_map(x: Tensor) -> Tensor:
    """Flatten a (C, H, W) map to (H*W, C) tokens in row-major pixel order."""
    c, h, w = x.shape
    return transpose(reshape(x, (c, h * w)))


def map_from_tokens(tokens: Tensor, h: int, w: int) -> Tensor:
    """Inverse of tokens_from_map."""
    n, c = tokens.shape
    if n != h * w:
        raise ShapeError(f"{n} tokens cannot fill a {h}x{w} grid")
    return reshape(transpose(tokens), (c, h, w))


def cross_attention(q_feat: Tensor, kv_feat: Tensor, pos_q: Tensor, pos_kv: Tensor,
                    *, cosine: bool, subtract: bool, dropout_p: float = 0.0,
                    rng: np.random.Generator | None = None,
                    training: bool = False) -> tuple[Tensor, Tensor]:
    """Single-head cross attention between token sequences; returns (output, map).

    Queries, keys, and values all carry their position encodings, and the
    attended values are combined with the positioned query through addition
    or subtraction depending on ``subtract``.
    """
    if q_feat.shape[1] != kv_feat.shape[1]:
        raise ShapeError(f"channel mismatch: queries {q_feat.shape} vs keys {kv_feat.shape}")
    q = q_feat + pos_q
    k = kv_feat + pos_kv
    v = k
    if cosine:
        logits = matmul(l2_normalize_rows(q), transpose(l2_normalize_rows(k)))
    else:
        logits = matmul(q, transpose(k)) * (1.0 / math.sqrt(q.shape[1]))
    attn = softmax_lastdim(logits)
    attended = matmul(dropout(attn, dropout_p, rng, training), v)
    out = q - attended if subtract else q + attended
    return out, attn


def standard_cross_attention(q_feat, kv_feat, pos_q, pos_kv, **kwargs) -> Tensor:
    out, _ = cross_attention(q_feat, kv_feat, pos_q, pos_kv,
                             cosine=False, subtract=False, **kwargs)
    return out


def offset_cross_attention(q_feat, kv_feat, pos_q, pos_kv, **kwargs):
    return cross_attention(q_feat, kv_feat, pos_q, pos_kv,
                           cosine=True, subtract=True, **kwargs)


class FeedForward(Module):
    """Three linear maps with two ReLUs; hidden width 4x the channel count."""

    def __init__(self, channels: int, rng: np.random.Generator):
        super().__init__()
        hidden = 4 * channels
        self.fc1 = Linear(channels, hidden, rng)
        self.fc2 = Linear(hidden, hidden, rng)
        self.fc3 = Linear(hidden, channels, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc3(relu(self.fc2(relu(self.fc1(x)))))


class SelfAttention(Module):
    """Projected single-head self attention over the query embeddings.

    Off by default; kept as an ablation arm only, since relating the two
    temporal images needs no within-set mixing.
    """

    def __init__(self, channels: int, rng: np.random.Generator):
        super().__init__()
        self.proj_q = Linear(channels, channels, rng)
        self.proj_k = Linear(channels, channels, rng)
        self.proj_v = Linear(channels, channels, rng)
        self.norm = LayerNorm(channels)

    def forward(self, x: Tensor, pos: Tensor, dropout_p: float,
                rng: np.random.Generator | None, training: bool) -> Tensor:
        q = self.proj_q(x + pos)
        k = self.proj_k(x + pos)
        v = self.proj_v(x)
        logits = matmul(q, transpose(k)) * (1.0 / math.sqrt(x.shape[1]))
        attn = dropout(softmax_lastdim(logits), dropout_p, rng, training)
        return self.norm(x + matmul(attn, v))


class QueryDecoderLayer(Module):
    """Refine category queries against one scale's relational features."""

    def __init__(self, channels: int, rng: np.random.Generator,
                 use_ffn: bool = True, use_self_attention: bool = False,
                 dropout_p: float = 0.0):
        super().__init__()
        if use_self_attention:
            self.self_attn = SelfAttention(channels, rng)
        self.norm_attn = LayerNorm(channels)
        if use_ffn:
            self.ffn = FeedForward(channels, rng)
            self.norm_ffn = LayerNorm(channels)
        self.use_ffn = use_ffn
        self.use_self_attention = use_self_attention
        self.dropout_p = dropout_p

    def forward(self, queries: Tensor, context: Tensor, query_pos: Tensor,
                pos_kv: Tensor, rng: np.random.Generator | None = None) -> Tensor:
        if self.use_self_attention:
            queries = self.self_attn(queries, query_pos, self.dropout_p, rng, self.training)
        attended = standard_cross_attention(
            queries, context, query_pos, pos_kv,
            dropout_p=self.dropout_p, rng=rng, training=self.training)
        h = self.norm_attn(attended)
        if self.use_ffn:
            h = self.norm_ffn(h + self.ffn(h))
        return h


class MultiScaleDecoder(Module):
    """Chain the bi-temporal attention and query refinement over three scales.

    Scales run coarse to fine (strides 32, 16, 8). At each scale the decoded
    pyramids of the two branches meet in the configured cross-attention
    variant; the resulting relational tokens feed ``layers_per_scale`` query
    decoder layers. Query embeddings carry over from scale to scale.
    """

    def __init__(self, num_classes: int, channels: int, rng: np.random.Generator,
                 *, cosine: bool = True, subtract: bool = True,
                 use_ffn: bool = True, use_self_attention: bool = False,
                 dropout_p: float = 0.0, layers_per_scale: int = 1):
        super().__init__()
        self.queries = Parameter(np.zeros((num_classes, channels)))
        self.query_pos = Parameter(rng.standard_normal((num_classes, channels)))
        self.layers = [QueryDecoderLayer(channels, rng, use_ffn=use_ffn,
                                         use_self_attention=use_self_attention,
                                         dropout_p=dropout_p)
                       for _ in range(3 * layers_per_scale)]
        self.cosine = cosine
        self.subtract = subtract
        self.dropout_p = dropout_p
        self.layers_per_scale = layers_per_scale
        self.channels = channels

    def forward(self, pyr_before, pyr_after,
                rng: np.random.Generator | None = None):
        """Returns (per-scale query embeddings, relational tokens, attention
        maps, token grid sizes), each a coarse-to-fine list of length 3."""
        pix = self.queries
        pix_list, y_list, attn_list, grids = [], [], [], []
        for scale_idx, level in enumerate((3, 2, 1)):  # strides 32, 16, 8
            feat_b = pyr_before.levels[level]
            feat_a = pyr_after.levels[level]
            _, h, w = feat_b.shape
            pos = Tensor(sine_position_encoding(h, w, self.channels))
            rel, attn = cross_attention(
                tokens_from_map(feat_b), tokens_from_map(feat_a), pos, pos,
                cosine=self.cosine, subtract=self.subtract,
                dropout_p=self.dropout_p, rng=rng, training=self.training)
            for j in range(self.layers_per_scale):
                layer = self.layers[scale_idx * self.layers_per_scale + j]
                pix = layer(pix, rel, self.query_pos, pos, rng=rng)
            pix_list.append(pix)
            y_list.append(rel)
            attn_list.append(attn)
            grids.append((h, w))
        return pix_list, y_list, attn_list, grids


def relation_logits(pix: Tensor, rel_tokens: Tensor, grid: tuple[int, int]) -> Tensor:
    """Per-scale change scores: query-vs-token inner products as a (K, h, w) map."""
    h, w = grid
    return reshape(matmul(pix, transpose(rel_tokens)), (pix.shape[0], h, w))


def mean_attention_grid(attn: np.ndarray, grid: tuple[int, int]) -> np.ndarray:
    """Average an (Lq, Lk) attention map over queries onto the key grid."""
    h, w = grid
    return attn.mean(axis=0).reshape(h, w)
