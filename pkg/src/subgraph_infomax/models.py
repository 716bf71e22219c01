"""Model variants: assembly of encoder, readout, discriminator, samplers, losses.

Five single-stage variants plus the two-stage composition.  Every step
produces class logits from the observed portion of a subgraph; in training
it additionally produces the variant's MI loss(es) and the cross-entropy,
combined as ``loss_graph + sum_i lambda_i * loss_i``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import (
    GlobalGraph,
    KhopPartition,
    PartialSubgraph,
    SubgraphRecord,
    SubgraphView,
    khop_neighbors,
)
from .infomax import (
    Augmentor,
    LossWeights,
    augment,
    cross_subgraph_negatives,
    gd_loss,
    infonce_loss,
    khop_loss,
    ppr_view,
    shuffle_negatives,
)
from .layers import (
    BilinearDiscriminator,
    CosineDiscriminator,
    EmbeddingTable,
    GatedAttentionReadout,
    MeanMlpReadout,
    Mlp,
    PredictionHead,
    SageEncoder,
    cross_entropy,
    encode,
    positional_max_length,
)
from .optim import ParameterStore

SINGLE_VARIANTS = ("baseline", "ps-dgi", "ps-infograph", "ps-mvgrl", "ps-graphcl", "khop")
TWO_STAGE_SECONDS = ("ps-dgi", "ps-infograph")
GRAPHCL_AUGMENTATIONS = ("node-drop", "edge-perturb", "attr-mask")


@dataclass
class ModelConfig:
    """Plain-data model configuration; see the README for the config-file keys."""

    variant: str = "ps-infograph"
    estimator: str = "auto"
    k: int = 1
    pool_ratio: float = 1e-2
    lambda_single: float = 1.0
    lambda_khop: float = 1.0
    lambda_second: float = 1.0
    p_d: float = 0.0
    aug_p: float = 0.2
    ppr_alpha: float = 0.15
    ppr_top_t: int = 32
    temperature: float = 0.5
    hidden_dim: int = 64
    use_positional_encoding: bool = False
    dropout: float = 0.2
    neighbor_cap: int | None = 5000
    max_positions: int = 20
    premixer: str = "mlp"
    include_observed_in_pool: bool = True
    concat_observed_summary: bool = False
    use_global_induced_edges: bool = False
    bidirectional: bool = False

    def __post_init__(self) -> None:
        if self.variant not in SINGLE_VARIANTS and not self.is_two_stage:
            raise ValueError(f"unknown model variant: {self.variant!r}")
        if self.is_two_stage and self.second_variant not in TWO_STAGE_SECONDS:
            raise ValueError(
                f"two-stage second model must be one of {TWO_STAGE_SECONDS}, "
                f"got {self.second_variant!r}"
            )
        if self.estimator not in ("auto", "gd", "infonce"):
            raise ValueError(f"unknown estimator: {self.estimator!r}")
        resolved = self.resolved_estimator
        if self.estimator != "auto" and self.estimator != resolved:
            raise ValueError(
                f"variant {self.variant!r} uses the {resolved!r} estimator, "
                f"not {self.estimator!r}"
            )
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if not 0.0 < self.pool_ratio <= 1.0:
            raise ValueError(f"pool_ratio must be in (0, 1], got {self.pool_ratio}")
        for name in ("lambda_single", "lambda_khop", "lambda_second"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0.0 <= self.p_d < 1.0:
            raise ValueError(f"p_d must be in [0, 1), got {self.p_d}")

    @property
    def is_two_stage(self) -> bool:
        return "+" in self.variant

    @property
    def first_variant(self) -> str:
        return self.variant.split("+", 1)[0] if self.is_two_stage else self.variant

    @property
    def second_variant(self) -> str | None:
        return self.variant.split("+", 1)[1] if self.is_two_stage else None

    @property
    def resolved_estimator(self) -> str:
        return "infonce" if self.first_variant == "ps-graphcl" else "gd"


@dataclass
class StepOutput:
    """Result of one model step.

    In inference mode only ``logits`` is set.  In training, ``objective`` is
    the differentiable total and ``total`` its float value, exactly equal to
    ``loss_graph`` plus the lambda-weighted loss fields, composed left to
    right in field order.
    """

    logits: np.ndarray
    objective: Tensor | None = None
    loss_graph: float | None = None
    loss_infomax: float | None = None
    loss_khop: float | None = None
    loss_second: float | None = None
    total: float | None = None


@dataclass
class BatchContext:
    """In-batch material for cross-subgraph negative sampling."""

    records: tuple[SubgraphRecord, ...]
    target_index: int = 0
    encoded_full: tuple[Tensor, ...] | None = None
    aug_summaries: tuple[Tensor, ...] | None = None

    def for_target(self, index: int) -> "BatchContext":
        return dataclasses.replace(self, target_index=index)


class KhopResult(NamedTuple):
    s_khop: Tensor
    loss_khop: Tensor | None
    s_obs: Tensor
    partition: KhopPartition
    scored_ids: tuple[int, ...]
    selected_ids: tuple[int, ...]


def observation_positions(
    record: SubgraphRecord, partial: PartialSubgraph, enabled: bool
) -> list[int] | None:
    """Positional-encoding ranks for the observed rows (sorted-id order)."""
    if not enabled or record.observation_order is None:
        return None
    rank = {n: i for i, n in enumerate(record.observation_order)}
    return [rank[n] for n in partial.observed_ids]


class _ModelBase:
    """Sharable wiring: embedding table, encoder, views, batch preparation."""

    config: ModelConfig
    graph: GlobalGraph
    store: ParameterStore
    table: EmbeddingTable
    encoder: SageEncoder

    def _init_common(
        self,
        config: ModelConfig,
        graph: GlobalGraph,
        num_classes: int,
        feature_dim: int,
        rng: np.random.Generator,
        embedding_values,
        embedding_trainable: bool,
        g_dim: int | None,
    ) -> None:
        self.config = config
        self.graph = graph
        self.num_classes = num_classes
        self.feature_dim = feature_dim
        self.g_dim = g_dim
        self.store = ParameterStore()
        self.table = EmbeddingTable(
            self.store, "embedding", graph.num_nodes, feature_dim, rng,
            values=embedding_values, trainable=embedding_trainable,
        )
        self.encoder = SageEncoder(
            self.store, "encoder", feature_dim, config.hidden_dim, rng,
            bidirectional=config.bidirectional, dropout=config.dropout,
        )

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(
            lambda_single=self.config.lambda_single,
            lambda_khop=self.config.lambda_khop,
            lambda_second=self.config.lambda_second,
        )

    def full_view(self, record: SubgraphRecord) -> SubgraphView:
        if self.config.use_global_induced_edges:
            return SubgraphView(record.node_ids, self.graph.induced_edges(record.node_ids))
        return SubgraphView.from_record(record)

    def encode_view(
        self,
        view: SubgraphView,
        training: bool,
        rng: np.random.Generator | None,
        encoder: SageEncoder | None = None,
    ) -> Tensor:
        return encode(
            encoder or self.encoder,
            self.table,
            view.node_ids,
            view.edges,
            training=training,
            rng=rng,
            masked=view.masked or None,
            edge_weights=view.edge_weights,
        )

    def _needs_full_batch(self) -> bool:
        return (
            self.config.first_variant == "ps-infograph"
            or self.config.second_variant == "ps-infograph"
        )

    def _needs_augmented_batch(self) -> bool:
        return self.config.first_variant == "ps-graphcl"

    def prepare_batch(
        self,
        records: Sequence[SubgraphRecord],
        rng: np.random.Generator | None,
        training: bool,
    ) -> BatchContext:
        """Encode per-batch material once; reuse it for every target in the batch."""
        records = tuple(records)
        encoded_full = None
        aug_summaries = None
        if training and self._needs_full_batch():
            encoded_full = tuple(
                self.encode_view(self.full_view(r), training, rng) for r in records
            )
        if training and self._needs_augmented_batch():
            summaries = []
            for r in records:
                view = self.full_view(r)
                for aug in self.augmentors:
                    view = augment(aug, view, rng)
                h = self.encode_view(view, training, rng)
                summaries.append(self.readout(h))
            aug_summaries = tuple(summaries)
        return BatchContext(
            records=records, encoded_full=encoded_full, aug_summaries=aug_summaries
        )


def topk_softmax_pool(
    scores: Tensor,
    h: Tensor,
    node_ids,
    pool_ratio: float,
    mlp,
) -> tuple[Tensor, tuple[int, ...]]:
    """Softmax-weighted pooling over the top-scoring rows.

    Keeps ``ceil(pool_ratio * n)`` rows (at least one), ranked by score with
    ties broken by lower node id, and returns
    ``softmax(scores[idx]) @ mlp(h[idx])`` plus the selected ids.
    """
    if not 0.0 < pool_ratio <= 1.0:
        raise ValueError(f"pool_ratio must be in (0, 1], got {pool_ratio}")
    ids = np.asarray(node_ids, dtype=np.int64)
    n = ids.size
    if scores.shape != (n, 1) or h.shape[0] != n:
        raise ValueError(
            f"pooling shapes disagree: scores {scores.shape}, h {h.shape}, {n} ids"
        )
    count = min(n, max(1, math.ceil(pool_ratio * n)))
    order = np.lexsort((ids, -scores.values[:, 0]))
    selected = np.sort(order[:count])
    weights = ad.softmax_rows(ad.transpose(ad.gather_rows(scores, selected)))
    pooled = ad.matmul(weights, mlp(ad.gather_rows(h, selected)))
    return pooled, tuple(int(ids[i]) for i in selected)


def khop_forward(
    model: "_ModelBase",
    record: SubgraphRecord,
    partial: PartialSubgraph,
    k: int | None = None,
    pool_ratio: float | None = None,
    rng: np.random.Generator | None = None,
    training: bool = False,
) -> KhopResult:
    """Score the k-hop neighborhood against the observed summary and pool it.

    The pooled summary is a softmax-weighted average of the top-scoring
    rows (ties broken by lower node id), passed through a two-layer MLP.
    In training the membership loss over the neighborhood partition is
    also returned.
    """
    cfg = model.config
    k = cfg.k if k is None else k
    ratio = cfg.pool_ratio if pool_ratio is None else pool_ratio
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"pool_ratio must be in (0, 1], got {ratio}")

    partition = khop_neighbors(
        model.graph,
        partial.observed_ids,
        k,
        cap=cfg.neighbor_cap,
        p_d=cfg.p_d if training else 0.0,
        rng=rng,
        subgraph=record,
    )
    h_obs = model.encode_view(SubgraphView.from_partial(partial), training, rng)
    positions = observation_positions(record, partial, cfg.use_positional_encoding)
    s_obs = model.readout(h_obs, positions)

    observed_set = set(partial.observed_ids)
    all_ids = tuple(sorted(observed_set | set(partition.neighbors)))
    h_khop = encode(
        model.encoder, model.table, all_ids, partition.edges_khop,
        training=training, rng=rng,
    )
    scores = model.discriminator(h_khop, s_obs)

    if cfg.include_observed_in_pool:
        base_rows = np.arange(len(all_ids))
    else:
        neighbor_set = set(partition.neighbors)
        base_rows = np.array(
            [i for i, gid in enumerate(all_ids) if gid in neighbor_set], dtype=np.int64
        )
        if base_rows.size == 0:
            base_rows = np.arange(len(all_ids))
    pooled, selected_ids = topk_softmax_pool(
        ad.gather_rows(scores, base_rows),
        ad.gather_rows(h_khop, base_rows),
        [all_ids[i] for i in base_rows],
        ratio,
        model.pool_mlp,
    )

    loss = None
    if training:
        in_sub = set(partition.in_subgraph)
        pos_rows = [i for i, gid in enumerate(all_ids) if gid in observed_set or gid in in_sub]
        neg_rows = [i for i, gid in enumerate(all_ids) if gid in set(partition.outside)]
        pos = ad.gather_rows(scores, pos_rows) if pos_rows else None
        neg = ad.gather_rows(scores, neg_rows) if neg_rows else None
        loss = khop_loss(pos, neg)
    return KhopResult(
        s_khop=pooled,
        loss_khop=loss,
        s_obs=s_obs,
        partition=partition,
        scored_ids=all_ids,
        selected_ids=selected_ids,
    )


class PsiModel(_ModelBase):
    """One single-stage variant, wired per its substructure pairing,
    negative sampling, augmentation, encoder sharing, and estimator.
    The ``baseline`` variant is the plain encoder-readout-head trained
    with cross-entropy only."""

    def __init__(
        self,
        config: ModelConfig,
        graph: GlobalGraph,
        num_classes: int,
        feature_dim: int,
        rng: np.random.Generator,
        embedding_values=None,
        embedding_trainable: bool = True,
        g_dim: int | None = None,
    ):
        if config.is_two_stage:
            raise ValueError("use TwoStageModel for composed variants")
        self._init_common(
            config, graph, num_classes, feature_dim, rng,
            embedding_values, embedding_trainable, g_dim,
        )
        self.variant = config.variant
        dim = config.hidden_dim
        self.readout = MeanMlpReadout(self.store, "readout", dim, rng)
        if self.variant == "baseline":
            self.discriminator = None
            self.augmentors = ()
        elif self.variant == "ps-graphcl":
            self.discriminator = CosineDiscriminator(config.temperature)
            self.augmentors = tuple(
                Augmentor(name, p=config.aug_p) for name in GRAPHCL_AUGMENTATIONS
            )
        else:
            self.discriminator = BilinearDiscriminator(self.store, "discriminator", dim, rng)
            self.augmentors = ()
        if self.variant == "ps-mvgrl":
            self.encoder_b = SageEncoder(
                self.store, "encoder_b", feature_dim, dim, rng,
                bidirectional=config.bidirectional, dropout=config.dropout,
            )
        if self.variant == "khop":
            self.pool_mlp = Mlp(self.store, "pool_mlp", dim, dim, dim, rng)
            head_in = 2 * dim if config.concat_observed_summary else dim
        else:
            head_in = dim
        self.head = PredictionHead(self.store, "head", head_in, num_classes, rng, g_dim=g_dim)

    def step(
        self,
        record: SubgraphRecord,
        partial: PartialSubgraph,
        batch: BatchContext | None = None,
        rng: np.random.Generator | None = None,
        training: bool = False,
    ) -> StepOutput:
        g = record.subgraph_feature
        if self.variant == "khop":
            return self._khop_step(record, partial, rng, training, g)
        h_obs = self.encode_view(SubgraphView.from_partial(partial), training, rng)
        positions = observation_positions(record, partial, self.config.use_positional_encoding)
        s_obs = self.readout(h_obs, positions)
        logits = self.head(s_obs, g)
        if not training:
            return StepOutput(logits=logits.values[0].copy())
        ce = cross_entropy(logits, record.label)
        if self.variant == "baseline":
            return StepOutput(
                logits=logits.values[0].copy(),
                objective=ce,
                loss_graph=ce.item(),
                total=ce.item(),
            )
        li = self._infomax_loss(record, partial, s_obs, positions, batch, rng, training)
        objective = ad.add(ce, ad.scale(li, self.config.lambda_single))
        return StepOutput(
            logits=logits.values[0].copy(),
            objective=objective,
            loss_graph=ce.item(),
            loss_infomax=li.item(),
            total=objective.item(),
        )

    def _khop_step(self, record, partial, rng, training, g) -> StepOutput:
        result = khop_forward(self, record, partial, rng=rng, training=training)
        summary = result.s_khop
        if self.config.concat_observed_summary:
            summary = ad.concat_cols(summary, result.s_obs)
        logits = self.head(summary, g)
        if not training:
            return StepOutput(logits=logits.values[0].copy())
        ce = cross_entropy(logits, record.label)
        objective = ad.add(ce, ad.scale(result.loss_khop, self.config.lambda_khop))
        return StepOutput(
            logits=logits.values[0].copy(),
            objective=objective,
            loss_graph=ce.item(),
            loss_khop=result.loss_khop.item(),
            total=objective.item(),
        )

    def _infomax_loss(self, record, partial, s_obs, positions, batch, rng, training) -> Tensor:
        if self.variant == "ps-dgi":
            h_sub = self.encode_view(self.full_view(record), training, rng)
            pos = self.discriminator(h_sub, s_obs)
            neg = self.discriminator(shuffle_negatives(h_sub, rng), s_obs)
            return gd_loss(pos, neg)

        if self.variant == "ps-infograph":
            if batch is None or batch.encoded_full is None or len(batch.records) < 2:
                raise ValueError(
                    "ps-infograph training needs a batch context with at least "
                    "2 encoded subgraphs"
                )
            h_sub = batch.encoded_full[batch.target_index]
            h_neg = cross_subgraph_negatives(batch.encoded_full, batch.target_index)
            return gd_loss(
                self.discriminator(h_sub, s_obs), self.discriminator(h_neg, s_obs)
            )

        if self.variant == "ps-mvgrl":
            cfg = self.config
            obs_view = SubgraphView.from_partial(partial)
            obs_diffused = ppr_view(obs_view, cfg.ppr_alpha, cfg.ppr_top_t)
            s_obs_b = self.readout(
                self.encode_view(obs_diffused, training, rng, encoder=self.encoder_b),
                positions,
            )
            full = self.full_view(record)
            h_a = self.encode_view(full, training, rng)
            h_b = self.encode_view(
                ppr_view(full, cfg.ppr_alpha, cfg.ppr_top_t), training, rng,
                encoder=self.encoder_b,
            )
            loss_a = gd_loss(
                self.discriminator(h_a, s_obs_b),
                self.discriminator(shuffle_negatives(h_a, rng), s_obs_b),
            )
            loss_b = gd_loss(
                self.discriminator(h_b, s_obs),
                self.discriminator(shuffle_negatives(h_b, rng), s_obs),
            )
            return ad.scale(ad.add(loss_a, loss_b), 0.5)

        # ps-graphcl: the observed summary against the augmented full-subgraph
        # summary, negatives are the other in-batch augmented summaries.
        if batch is None or batch.aug_summaries is None or len(batch.records) < 2:
            raise ValueError(
                "ps-graphcl training needs a batch context with at least "
                "2 augmented summaries"
            )
        pos = self.discriminator(batch.aug_summaries[batch.target_index], s_obs)
        negs = ad.concat_cols(
            *[
                ad.transpose(self.discriminator(s, s_obs))
                for i, s in enumerate(batch.aug_summaries)
                if i != batch.target_index
            ]
        )
        return infonce_loss(pos, negs)


class TwoStageModel(_ModelBase):
    """k-hop reconstruction composed with a second discrimination stage.

    The reconstructed summary both feeds the prediction head and acts as the
    summary the second stage discriminates against.  The encoder is shared
    across stages; each stage has its own bilinear matrix.
    """

    def __init__(
        self,
        config: ModelConfig,
        graph: GlobalGraph,
        num_classes: int,
        feature_dim: int,
        rng: np.random.Generator,
        embedding_values=None,
        embedding_trainable: bool = True,
        g_dim: int | None = None,
    ):
        if not config.is_two_stage:
            raise ValueError("TwoStageModel requires a composed variant like 'khop+ps-dgi'")
        if config.first_variant != "khop":
            raise ValueError("the first stage of a two-stage model must be 'khop'")
        self._init_common(
            config, graph, num_classes, feature_dim, rng,
            embedding_values, embedding_trainable, g_dim,
        )
        self.second = config.second_variant
        dim = config.hidden_dim
        premixer = None if config.premixer == "none" else config.premixer
        self.readout = GatedAttentionReadout(
            self.store, "readout", dim, rng, premixer=premixer,
            max_positions=config.max_positions,
        )
        self.discriminator = BilinearDiscriminator(self.store, "discriminator", dim, rng)
        self.discriminator_second = BilinearDiscriminator(
            self.store, "discriminator_second", dim, rng
        )
        self.pool_mlp = Mlp(self.store, "pool_mlp", dim, dim, dim, rng)
        head_in = 2 * dim if config.concat_observed_summary else dim
        self.head = PredictionHead(self.store, "head", head_in, num_classes, rng, g_dim=g_dim)
        self.augmentors = ()

    def step(
        self,
        record: SubgraphRecord,
        partial: PartialSubgraph,
        batch: BatchContext | None = None,
        rng: np.random.Generator | None = None,
        training: bool = False,
    ) -> StepOutput:
        g = record.subgraph_feature
        result = khop_forward(self, record, partial, rng=rng, training=training)
        summary = result.s_khop
        if self.config.concat_observed_summary:
            summary = ad.concat_cols(summary, result.s_obs)
        logits = self.head(summary, g)
        if not training:
            return StepOutput(logits=logits.values[0].copy())

        ce = cross_entropy(logits, record.label)
        loss_second = self._second_loss(record, result.s_khop, batch, rng, training)
        objective = ad.add(
            ad.add(ce, ad.scale(result.loss_khop, self.config.lambda_khop)),
            ad.scale(loss_second, self.config.lambda_second),
        )
        return StepOutput(
            logits=logits.values[0].copy(),
            objective=objective,
            loss_graph=ce.item(),
            loss_khop=result.loss_khop.item(),
            loss_second=loss_second.item(),
            total=objective.item(),
        )

    def _second_loss(self, record, s_khop, batch, rng, training) -> Tensor:
        if self.second == "ps-dgi":
            h_sub = self.encode_view(self.full_view(record), training, rng)
            return gd_loss(
                self.discriminator_second(h_sub, s_khop),
                self.discriminator_second(shuffle_negatives(h_sub, rng), s_khop),
            )
        if batch is None or batch.encoded_full is None or len(batch.records) < 2:
            raise ValueError(
                "the second stage needs a batch context with at least 2 encoded subgraphs"
            )
        h_sub = batch.encoded_full[batch.target_index]
        h_neg = cross_subgraph_negatives(batch.encoded_full, batch.target_index)
        return gd_loss(
            self.discriminator_second(h_sub, s_khop),
            self.discriminator_second(h_neg, s_khop),
        )


def build_model(
    config: ModelConfig,
    graph: GlobalGraph,
    num_classes: int,
    feature_dim: int,
    rng: np.random.Generator,
    embedding_values=None,
    embedding_trainable: bool = True,
    g_dim: int | None = None,
):
    cls = TwoStageModel if config.is_two_stage else PsiModel
    return cls(
        config, graph, num_classes, feature_dim, rng,
        embedding_values=embedding_values,
        embedding_trainable=embedding_trainable,
        g_dim=g_dim,
    )
