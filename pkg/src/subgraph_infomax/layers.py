"""Encoder, readouts, discriminators, and the prediction head.

The encoder is a two-layer mean-aggregating message passer with skip
connections: the first layer projects the input width to the hidden width
(skip via a linear projection of the input), the second uses an identity
skip.  Message passing is expressed with gather + segment-mean over a local
edge index, so isolated nodes receive a zero neighbor aggregate.
"""

from __future__ import annotations

import logging
import math
from functools import lru_cache
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .optim import ParameterStore

log = logging.getLogger(__name__)

DEFAULT_MAX_POSITIONS = 20


def positional_max_length(n_obs: int) -> int:
    """Positional-encoding budget for a target observation count (20 at 8, 36 at 16, ...)."""
    return 2 * n_obs + 4


class EmbeddingTable:
    """Per-node input features, trainable by default or loaded from file."""

    def __init__(
        self,
        store: ParameterStore,
        name: str,
        num_nodes: int,
        dim: int,
        rng: np.random.Generator | None = None,
        values=None,
        trainable: bool = True,
    ):
        if values is not None:
            values = np.asarray(values, dtype=np.float64)
            if values.shape != (num_nodes, dim):
                raise ValueError(
                    f"embedding values shape {values.shape} != ({num_nodes}, {dim})"
                )
        self.num_nodes = num_nodes
        self.dim = dim
        self.weights = store.create(
            name, (num_nodes, dim), rng=rng, values=values, trainable=trainable
        )

    def gather(self, node_ids) -> Tensor:
        return ad.gather_rows(self.weights, node_ids)


class Mlp:
    """Two fully connected layers with a ReLU in between."""

    def __init__(
        self,
        store: ParameterStore,
        name: str,
        in_dim: int,
        hidden_dim: int,
        out_dim: int,
        rng: np.random.Generator,
    ):
        self.w1 = store.create(f"{name}.w1", (in_dim, hidden_dim), rng)
        self.b1 = store.create(f"{name}.b1", (1, hidden_dim), rng, fan_in=in_dim)
        self.w2 = store.create(f"{name}.w2", (hidden_dim, out_dim), rng)
        self.b2 = store.create(f"{name}.b2", (1, out_dim), rng, fan_in=hidden_dim)

    def __call__(self, x: Tensor) -> Tensor:
        h = ad.relu(ad.add(ad.matmul(x, self.w1), self.b1))
        return ad.add(ad.matmul(h, self.w2), self.b2)


def _aggregate(
    h: Tensor,
    edges: np.ndarray,
    num_nodes: int,
    weights: np.ndarray | None = None,
) -> Tensor:
    """Mean (or weighted mean) of in-neighbor rows per node; zeros when none."""
    if edges.size == 0:
        return Tensor(np.zeros((num_nodes, h.shape[1])))
    src, dst = edges[:, 0], edges[:, 1]
    messages = ad.gather_rows(h, src)
    if weights is None:
        return ad.segment_mean(messages, dst, num_nodes)
    totals = np.zeros(num_nodes)
    np.add.at(totals, dst, weights)
    coeff = (weights / np.maximum(totals[dst], 1e-12))[:, None]
    return ad.segment_sum(ad.mul(messages, Tensor(coeff)), dst, num_nodes)


class SageLayer:
    """One mean-aggregation layer: relu(W_self h + W_neigh mean_nbrs) + skip."""

    def __init__(
        self,
        store: ParameterStore,
        name: str,
        in_dim: int,
        out_dim: int,
        rng: np.random.Generator,
        bidirectional: bool = False,
        project_skip: bool = False,
    ):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.bidirectional = bidirectional
        self.w_self = store.create(f"{name}.w_self", (in_dim, out_dim), rng)
        if bidirectional:
            if out_dim % 2:
                raise ValueError("bidirectional layers need an even output width")
            half = out_dim // 2
            self.w_fwd = store.create(f"{name}.w_fwd", (in_dim, half), rng)
            self.w_rev = store.create(f"{name}.w_rev", (in_dim, half), rng)
        else:
            self.w_neigh = store.create(f"{name}.w_neigh", (in_dim, out_dim), rng)
        if project_skip:
            self.w_skip = store.create(f"{name}.w_skip", (in_dim, out_dim), rng)
        else:
            if in_dim != out_dim:
                raise ValueError("identity skip requires in_dim == out_dim")
            self.w_skip = None

    def __call__(
        self,
        h: Tensor,
        edges: np.ndarray,
        weights: np.ndarray | None = None,
    ) -> Tensor:
        n = h.shape[0]
        if self.bidirectional:
            agg_f = _aggregate(h, edges, n, weights)
            agg_r = _aggregate(h, edges[:, ::-1] if edges.size else edges, n, weights)
            neigh = ad.concat_cols(
                ad.matmul(agg_f, self.w_fwd), ad.matmul(agg_r, self.w_rev)
            )
        else:
            neigh = ad.matmul(_aggregate(h, edges, n, weights), self.w_neigh)
        out = ad.relu(ad.add(ad.matmul(h, self.w_self), neigh))
        skip = h if self.w_skip is None else ad.matmul(h, self.w_skip)
        return ad.add(out, skip)


class SageEncoder:
    """Two mean-aggregation layers with skips; dropout between layers in training."""

    num_layers = 2

    def __init__(
        self,
        store: ParameterStore,
        name: str,
        in_dim: int,
        hidden_dim: int,
        rng: np.random.Generator,
        bidirectional: bool = False,
        dropout: float = 0.2,
    ):
        self.in_dim = in_dim
        self.hidden_dim = hidden_dim
        self.dropout = dropout
        self.layer1 = SageLayer(
            store, f"{name}.layer1", in_dim, hidden_dim, rng,
            bidirectional=bidirectional, project_skip=True,
        )
        self.layer2 = SageLayer(
            store, f"{name}.layer2", hidden_dim, hidden_dim, rng,
            bidirectional=bidirectional, project_skip=False,
        )

    def __call__(
        self,
        x: Tensor,
        edges: np.ndarray,
        training: bool = False,
        rng: np.random.Generator | None = None,
        weights: np.ndarray | None = None,
    ) -> Tensor:
        h = self.layer1(x, edges, weights)
        if training and self.dropout > 0.0:
            if rng is None:
                raise ValueError("training with dropout requires an rng")
            h = ad.dropout(h, self.dropout, rng)
        return self.layer2(h, edges, weights)


def encode(
    encoder: SageEncoder,
    table: EmbeddingTable,
    node_ids: Sequence[int],
    edges: Sequence[tuple[int, int]],
    training: bool = False,
    rng: np.random.Generator | None = None,
    masked: frozenset[int] | set[int] | None = None,
    edge_weights: Sequence[float] | None = None,
) -> Tensor:
    """Encode a node set with its edges; rows follow the order of ``node_ids``.

    Edges are re-indexed locally and must reference only ``node_ids``.
    ``masked`` node ids get zeroed feature rows before encoding.
    """
    ids = [int(n) for n in node_ids]
    position = {n: i for i, n in enumerate(ids)}
    local = np.empty((len(edges), 2), dtype=np.int64)
    for row, (u, v) in enumerate(edges):
        try:
            local[row, 0] = position[int(u)]
            local[row, 1] = position[int(v)]
        except KeyError:
            raise ValueError(f"edge ({u}, {v}) references a node outside node_ids") from None
    x = table.gather(ids)
    if masked:
        keep = np.array([[0.0] if n in masked else [1.0] for n in ids])
        x = ad.mul(x, Tensor(keep))
    weights = None
    if edge_weights is not None:
        weights = np.asarray(edge_weights, dtype=np.float64)
        if weights.shape != (len(edges),):
            raise ValueError(
                f"edge_weights length {weights.shape} != number of edges {len(edges)}"
            )
    return encoder(x, local, training=training, rng=rng, weights=weights)


@lru_cache(maxsize=32)
def _sinusoid_table(max_len: int, dim: int) -> np.ndarray:
    table = np.zeros((max_len, dim))
    pos = np.arange(max_len)[:, None].astype(np.float64)
    idx = np.arange(0, dim, 2).astype(np.float64)
    angles = pos / np.power(10000.0, idx / dim)[None, :]
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles[:, : table[:, 1::2].shape[1]])
    return table


def sinusoidal_encoding(positions: Sequence[int], dim: int, max_len: int) -> np.ndarray:
    """Sinusoidal position rows for the given integer positions."""
    pos = np.asarray(positions, dtype=np.int64)
    if pos.size and pos.max() >= max_len:
        raise ValueError(f"position {pos.max()} exceeds the maximum length {max_len}")
    return _sinusoid_table(max_len, dim)[pos]


class MeanMlpReadout:
    """Permutation-invariant summary: mean pooling after a two-layer MLP."""

    def __init__(self, store: ParameterStore, name: str, dim: int, rng: np.random.Generator):
        self.dim = dim
        self.mlp = Mlp(store, name, dim, dim, dim, rng)

    def __call__(self, h: Tensor, positions=None) -> Tensor:
        if h.shape[0] < 1:
            raise ValueError("readout requires at least one node row")
        return ad.mean_rows(self.mlp(h))


class _SdpMixer:
    """Single-head scaled-dot-product pre-mixer (no layer normalization)."""

    def __init__(self, store: ParameterStore, name: str, dim: int, rng: np.random.Generator):
        self.dim = dim
        self.w_q = store.create(f"{name}.w_q", (dim, dim), rng)
        self.w_k = store.create(f"{name}.w_k", (dim, dim), rng)
        self.w_v = store.create(f"{name}.w_v", (dim, dim), rng)

    def __call__(self, h: Tensor) -> Tensor:
        q = ad.matmul(h, self.w_q)
        k = ad.matmul(h, self.w_k)
        v = ad.matmul(h, self.w_v)
        attn = ad.softmax_rows(ad.scale(ad.matmul(q, ad.transpose(k)), 1.0 / math.sqrt(self.dim)))
        return ad.matmul(attn, v)


class GatedAttentionReadout:
    """Gated soft-attention pooling over a pluggable pre-mixer.

    ``s = sum_i sigmoid(gate(h_i)) * feat(h_i)`` after an optional sinusoidal
    positional encoding (order-aware) and a pre-mixer ("mlp", "attention", or
    None).  Without positions the result is permutation invariant.
    """

    def __init__(
        self,
        store: ParameterStore,
        name: str,
        dim: int,
        rng: np.random.Generator,
        premixer: str | None = "mlp",
        max_positions: int = DEFAULT_MAX_POSITIONS,
    ):
        self.dim = dim
        self.max_positions = max_positions
        if premixer == "mlp":
            self.premixer = Mlp(store, f"{name}.premixer", dim, dim, dim, rng)
        elif premixer == "attention":
            self.premixer = _SdpMixer(store, f"{name}.premixer", dim, rng)
        elif premixer is None:
            self.premixer = None
        else:
            raise ValueError(f"unknown premixer: {premixer!r}")
        self.gate = Mlp(store, f"{name}.gate", dim, dim, dim, rng)
        self.feat = Mlp(store, f"{name}.feat", dim, dim, dim, rng)

    def __call__(self, h: Tensor, positions: Sequence[int] | None = None) -> Tensor:
        if h.shape[0] < 1:
            raise ValueError("readout requires at least one node row")
        if positions is not None:
            if len(positions) != h.shape[0]:
                raise ValueError(
                    f"{len(positions)} positions for {h.shape[0]} rows"
                )
            pe = sinusoidal_encoding(positions, self.dim, self.max_positions)
            h = ad.add(h, Tensor(pe))
        if self.premixer is not None:
            h = self.premixer(h)
        return ad.sum_rows(ad.mul(ad.sigmoid(self.gate(h)), self.feat(h)))


class BilinearDiscriminator:
    """Pairing score h^T W s, linear in each argument."""

    def __init__(self, store: ParameterStore, name: str, dim: int, rng: np.random.Generator):
        self.dim = dim
        self.w = store.create(name, (dim, dim), rng)

    def __call__(self, h: Tensor, s: Tensor) -> Tensor:
        if h.shape[1] != self.dim or s.shape != (1, self.dim):
            raise ValueError(
                f"discriminator width mismatch: h {h.shape}, s {s.shape}, dim {self.dim}"
            )
        return ad.matmul(ad.matmul(h, self.w), ad.transpose(s))


class CosineDiscriminator:
    """Temperature-scaled cosine similarity; zero vectors score exactly 0."""

    def __init__(self, temperature: float):
        if temperature <= 0:
            raise ValueError(f"temperature must be > 0, got {temperature}")
        self.temperature = temperature

    def __call__(self, h: Tensor, s: Tensor) -> Tensor:
        if h.shape[1] != s.shape[1] or s.shape[0] != 1:
            raise ValueError(f"cosine width mismatch: h {h.shape}, s {s.shape}")
        if not h.values.any(axis=1).all() or not s.values.any():
            log.debug("cosine discriminator saw a zero vector; its score is 0 by convention")
        dots = ad.row_sums(ad.mul(h, s))
        h_norm = ad.sqrt(ad.clip_min(ad.row_sums(ad.mul(h, h)), 1e-30))
        s_norm = ad.sqrt(ad.clip_min(ad.row_sums(ad.mul(s, s)), 1e-30))
        return ad.scale(ad.div(dots, ad.mul(h_norm, s_norm)), 1.0 / self.temperature)


class PredictionHead:
    """Single linear layer to class logits, with an optional subgraph-feature path."""

    def __init__(
        self,
        store: ParameterStore,
        name: str,
        in_dim: int,
        num_classes: int,
        rng: np.random.Generator,
        g_dim: int | None = None,
    ):
        self.in_dim = in_dim
        self.num_classes = num_classes
        self.g_dim = g_dim
        if g_dim is not None:
            self.w_g = store.create(f"{name}.w_g", (g_dim, in_dim), rng)
            self.b_g = store.create(f"{name}.b_g", (1, in_dim), rng, fan_in=g_dim)
            width = 2 * in_dim
        else:
            self.w_g = None
            width = in_dim
        self.w = store.create(f"{name}.w", (width, num_classes), rng)
        self.b = store.create(f"{name}.b", (1, num_classes), rng, fan_in=width)

    def __call__(self, s: Tensor, g=None) -> Tensor:
        if g is not None and self.w_g is None:
            raise ValueError("subgraph feature given but the head has no feature path")
        if g is None and self.w_g is not None:
            raise ValueError("the head expects a subgraph feature")
        if g is not None:
            g_t = ad.as_tensor(np.asarray(g, dtype=np.float64).reshape(1, -1))
            if g_t.shape[1] != self.g_dim:
                raise ValueError(f"subgraph feature width {g_t.shape[1]} != {self.g_dim}")
            transformed = ad.add(ad.matmul(g_t, self.w_g), self.b_g)
            s = ad.concat_cols(s, transformed)
        return ad.add(ad.matmul(s, self.w), self.b)


def cross_entropy(logits: Tensor, label: int) -> Tensor:
    """Softmax cross-entropy of a (1, C) logit row against an integer label."""
    if not 0 <= label < logits.shape[1]:
        raise ValueError(f"label {label} out of range for {logits.shape[1]} classes")
    lse = ad.logsumexp_rows(logits)
    picked = ad.gather_rows(ad.transpose(logits), [label])
    return ad.add(lse, ad.scale(picked, -1.0))
