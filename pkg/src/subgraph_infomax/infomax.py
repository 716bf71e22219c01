"""Mutual-information losses, negative samplers, graph augmentations,
and exact verification of the conditional divergence bound.

Sign conventions: both estimators are implemented as losses whose
minimization tightens the corresponding MI bound.  The contrastive
(InfoNCE-style) loss is the standard negated form: with one positive and K
equal-scoring negatives it equals ln(K+1) and it decreases strictly as any
positive score grows.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import SubgraphView

log = logging.getLogger(__name__)

PPR_DENSE_CAP = 2000


@dataclass
class LossWeights:
    """Mixing weights for the joint objective."""

    lambda_single: float = 1.0
    lambda_khop: float = 1.0
    lambda_second: float = 1.0

    def __post_init__(self) -> None:
        for name in ("lambda_single", "lambda_khop", "lambda_second"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


def gd_loss(pos_scores, neg_scores) -> Tensor:
    """Binary joint-vs-marginal discrimination loss.

    ``-mean(log sigmoid(pos)) - mean(log(1 - sigmoid(neg)))`` with the stable
    identity ``log(1 - sigmoid(x)) = log sigmoid(-x)``.  All scores equal to 0
    give exactly 2 ln 2.
    """
    pos, neg = ad.as_tensor(pos_scores), ad.as_tensor(neg_scores)
    if pos.values.size == 0 or neg.values.size == 0:
        raise ValueError("gd_loss needs at least one positive and one negative score")
    pos_term = ad.mean_all(ad.log_sigmoid(pos))
    neg_term = ad.mean_all(ad.log_sigmoid(ad.neg(neg)))
    return ad.neg(ad.add(pos_term, neg_term))


def infonce_loss(pos_scores, neg_scores_per_pos) -> Tensor:
    """Contrastive loss of one positive against its row of negatives.

    ``-mean_i [pos_i - log(exp(pos_i) + sum_j exp(neg_ij))]``, log-sum-exp
    stabilized.  Scores are expected to be already temperature-scaled.
    """
    pos = ad.as_tensor(pos_scores)
    negs = ad.as_tensor(neg_scores_per_pos)
    if pos.shape[1] != 1:
        if pos.shape[0] == 1:
            pos = ad.transpose(pos)
        else:
            raise ValueError(f"positive scores must be a vector, got {pos.shape}")
    if negs.values.size == 0:
        raise ValueError("infonce_loss needs at least one negative per positive")
    if negs.shape[0] != pos.shape[0]:
        raise ValueError(
            f"negative rows {negs.shape} do not match positives {pos.shape}"
        )
    lse = ad.logsumexp_rows(ad.concat_cols(pos, negs))
    return ad.mean_all(ad.add(lse, ad.neg(pos)))


def khop_loss(pos_scores, neg_scores) -> Tensor:
    """Neighborhood-membership loss: one joint mean over all score terms.

    Unlike ``gd_loss`` (two per-side means), this normalizes positives and
    negatives together by the total term count.  With balanced all-zero sides
    it equals ln 2.  One empty side is tolerated with a warning; both empty is
    an error.
    """
    pos = ad.as_tensor(pos_scores) if pos_scores is not None else None
    neg = ad.as_tensor(neg_scores) if neg_scores is not None else None
    n_pos = 0 if pos is None else pos.values.size
    n_neg = 0 if neg is None else neg.values.size
    if n_pos == 0 and n_neg == 0:
        raise ValueError("khop_loss needs at least one score on one side")
    if n_pos == 0 or n_neg == 0:
        log.warning("khop_loss computed with an empty %s side", "positive" if n_pos == 0 else "negative")
    terms = []
    if n_pos:
        terms.append(ad.sum_all(ad.log_sigmoid(pos)))
    if n_neg:
        terms.append(ad.sum_all(ad.log_sigmoid(ad.neg(neg))))
    total = terms[0] if len(terms) == 1 else ad.add(terms[0], terms[1])
    return ad.scale(total, -1.0 / (n_pos + n_neg))


@dataclass(frozen=True)
class NegativeSampler:
    """Negative-sample source: row-wise shuffled nodes or nodes of other
    in-batch subgraphs."""

    variant: str
    seed: int = 0

    def __post_init__(self) -> None:
        if self.variant not in ("row-shuffle", "cross-subgraph"):
            raise ValueError(f"unknown negative sampler: {self.variant!r}")

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)

    def draw(self, encoded, target_index: int = 0, rng: np.random.Generator | None = None) -> Tensor:
        if self.variant == "row-shuffle":
            return shuffle_negatives(encoded, rng if rng is not None else self.rng())
        return cross_subgraph_negatives(encoded, target_index)


def shuffle_negatives(h: Tensor, rng: np.random.Generator) -> Tensor:
    """Row-wise shuffle corruption; a single row is returned unchanged."""
    h = ad.as_tensor(h)
    n = h.shape[0]
    if n == 1:
        return h
    return ad.gather_rows(h, rng.permutation(n))


def cross_subgraph_negatives(
    encoded: Sequence[Tensor], target_index: int, rng: np.random.Generator | None = None
) -> Tensor:
    """Stack the node rows of every non-target batch member.

    All non-target pairs act as negatives, so ``rng`` is accepted only for
    interface symmetry with the other samplers.
    """
    if len(encoded) < 2:
        raise ValueError(
            "cross-subgraph negatives need a batch of at least 2 subgraphs"
        )
    if not 0 <= target_index < len(encoded):
        raise ValueError(f"target index {target_index} out of range")
    others = [h for i, h in enumerate(encoded) if i != target_index]
    return others[0] if len(others) == 1 else ad.concat_rows(*others)


@dataclass(frozen=True)
class Augmentor:
    """One structural augmentation: node-drop, edge-perturb, attr-mask, or ppr."""

    variant: str
    p: float = 0.2
    alpha: float = 0.15
    top_t: int = 32

    def __post_init__(self) -> None:
        if self.variant not in ("node-drop", "edge-perturb", "attr-mask", "ppr"):
            raise ValueError(f"unknown augmentation: {self.variant!r}")
        if not 0.0 <= self.p < 1.0:
            raise ValueError(f"augmentation probability must be in [0, 1), got {self.p}")


def _node_drop(view: SubgraphView, p: float, rng: np.random.Generator) -> SubgraphView:
    ids = np.array(view.node_ids)
    keep = rng.random(ids.size) >= p
    if not keep.any():
        keep[rng.integers(ids.size)] = True  # forced retention of one node
    kept = set(int(n) for n in ids[keep])
    edges = tuple((u, v) for u, v in view.edges if u in kept and v in kept)
    return SubgraphView(
        node_ids=tuple(sorted(kept)),
        edges=edges,
        masked=frozenset(n for n in view.masked if n in kept),
    )


def _edge_perturb(view: SubgraphView, p: float, rng: np.random.Generator) -> SubgraphView:
    edges = list(view.edges)
    keep = rng.random(len(edges)) >= p
    surviving = [e for e, k in zip(edges, keep) if k]
    n_add = int(rng.binomial(len(edges), p)) if edges else 0
    present = set(surviving)
    ids = list(view.node_ids)
    added = 0
    attempts = 0
    while added < n_add and attempts < 50 * max(n_add, 1) and len(ids) > 1:
        u, v = rng.choice(ids, size=2, replace=False)
        cand = (int(u), int(v))
        if cand not in present and cand not in view.edges:
            present.add(cand)
            surviving.append(cand)
            added += 1
        attempts += 1
    return SubgraphView(
        node_ids=view.node_ids,
        edges=tuple(sorted(surviving)),
        masked=view.masked,
    )


def _attr_mask(view: SubgraphView, p: float, rng: np.random.Generator) -> SubgraphView:
    flips = rng.random(len(view.node_ids)) < p
    masked = set(view.masked)
    masked.update(n for n, f in zip(view.node_ids, flips) if f)
    return SubgraphView(view.node_ids, view.edges, frozenset(masked))


def augment(aug: Augmentor, view: SubgraphView, rng: np.random.Generator) -> SubgraphView:
    """Apply one augmentation, returning a structurally valid view."""
    if aug.variant == "node-drop":
        return _node_drop(view, aug.p, rng)
    if aug.variant == "edge-perturb":
        return _edge_perturb(view, aug.p, rng)
    if aug.variant == "attr-mask":
        return _attr_mask(view, aug.p, rng)
    return ppr_view(view, aug.alpha, aug.top_t)


class PprDiffusion(NamedTuple):
    matrix: np.ndarray
    edges: tuple[tuple[int, int], ...]
    weights: tuple[float, ...]


def ppr_diffusion(
    edges: Sequence[tuple[int, int]],
    n: int,
    alpha: float,
    top_t: int,
    dense_cap: int = PPR_DENSE_CAP,
) -> PprDiffusion:
    """Dense personalized-PageRank propagation over local node ids 0..n-1.

    Solves ``alpha * (I - (1 - alpha) * D^{-1/2} (A + I) D^{-1/2})^{-1}``
    after symmetrizing the input and forcing self-loops, then keeps the
    ``top_t`` largest entries per row as weighted edges (source = column,
    target = row).
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    if top_t < 1:
        raise ValueError(f"top_t must be >= 1, got {top_t}")
    if n > dense_cap:
        raise ValueError(
            f"{n} nodes exceed the dense solve cap of {dense_cap}; subsample the input first"
        )
    a = np.zeros((n, n))
    for u, v in edges:
        if not (0 <= u < n and 0 <= v < n):
            raise ValueError(f"edge ({u}, {v}) out of range for {n} nodes")
        a[u, v] = 1.0
        a[v, u] = 1.0
    np.fill_diagonal(a, 1.0)
    d_inv_sqrt = 1.0 / np.sqrt(a.sum(axis=1))
    s = d_inv_sqrt[:, None] * a * d_inv_sqrt[None, :]
    pi = alpha * np.linalg.inv(np.eye(n) - (1.0 - alpha) * s)

    kept_edges: list[tuple[int, int]] = []
    kept_weights: list[float] = []
    t = min(top_t, n)
    for i in range(n):
        cols = np.argpartition(-pi[i], t - 1)[:t]
        for j in sorted(int(c) for c in cols):
            kept_edges.append((j, i))
            kept_weights.append(float(pi[i, j]))
    return PprDiffusion(matrix=pi, edges=tuple(kept_edges), weights=tuple(kept_weights))


def ppr_view(view: SubgraphView, alpha: float, top_t: int) -> SubgraphView:
    """The diffusion-graph view of a subgraph: weighted edges from dense PPR."""
    ids = list(view.node_ids)
    index = {n: i for i, n in enumerate(ids)}
    local_edges = [(index[u], index[v]) for u, v in view.edges]
    diffusion = ppr_diffusion(local_edges, len(ids), alpha, top_t)
    edges = tuple((ids[u], ids[v]) for u, v in diffusion.edges)
    return SubgraphView(
        node_ids=view.node_ids,
        edges=edges,
        masked=view.masked,
        edge_weights=diffusion.weights,
    )


class CgdBound(NamedTuple):
    i_gd: float
    i_cgd: float
    holds: bool


def verify_cgd_bound(score_table, joint, tolerance: float = 1e-12) -> CgdBound:
    """Exact check that conditioning negatives on high-similarity candidates
    lower-bounds the divergence objective.

    Both objectives share the positive term ``E_{p(x,y)} log sigmoid(f)``.
    The unconditional one draws negatives from the marginal ``p(y)``; the
    conditional one restricts and renormalizes ``p(y)`` to
    ``{y : e^{f(x,y)} >= E_{p(y)} e^{f(x,y)}}`` (the maximizer always
    qualifies, so the set is never empty).  Returns both values and whether
    ``i_cgd <= i_gd + tolerance``.
    """
    f = np.asarray(score_table, dtype=np.float64)
    p = np.asarray(joint, dtype=np.float64)
    if f.ndim != 2 or p.shape != f.shape:
        raise ValueError(f"score table {f.shape} and joint {p.shape} must match")
    if f.shape[0] > 8 or f.shape[1] > 8:
        raise ValueError("exact enumeration is limited to 8x8 tables")
    if (p <= 0).any():
        raise ValueError("the joint distribution must be strictly positive")
    p = p / p.sum()
    px = p.sum(axis=1)
    py = p.sum(axis=0)

    log_sig = -np.logaddexp(0.0, -f)          # log sigmoid(f)
    log_one_minus = -np.logaddexp(0.0, f)     # log (1 - sigmoid(f))
    pos_term = float((p * log_sig).sum())

    ef = np.exp(f)
    thresholds = ef @ py                       # E_{p(y)} e^{f(x, .)} per x
    gd_neg = float(px @ (log_one_minus @ py))

    cgd_neg = 0.0
    for x in range(f.shape[0]):
        mask = ef[x] >= thresholds[x]
        if not mask.any():
            # Exact arithmetic guarantees the maximizer qualifies; rounding in
            # the threshold must not be allowed to empty the candidate set.
            mask = ef[x] == ef[x].max()
        q = py * mask
        q = q / q.sum()
        cgd_neg += px[x] * float(q @ log_one_minus[x])

    i_gd = pos_term + gd_neg
    i_cgd = pos_term + cgd_neg
    return CgdBound(i_gd=i_gd, i_cgd=i_cgd, holds=i_cgd <= i_gd + tolerance)


def cgd_random_trials(
    trials: int,
    rng: np.random.Generator,
    max_size: int = 8,
    tolerance: float = 1e-12,
) -> int:
    """Run random bound checks; returns the number of violations (expect 0)."""
    violations = 0
    for _ in range(trials):
        nx = int(rng.integers(1, max_size + 1))
        ny = int(rng.integers(1, max_size + 1))
        scores = rng.normal(0.0, 2.0, size=(nx, ny))
        joint = rng.random((nx, ny)) + 1e-3
        if not verify_cgd_bound(scores, joint, tolerance).holds:
            violations += 1
    return violations
