"""Property suites runnable outside pytest: gradient checks, oracle
equivalences, and the conditional divergence bound.

Shared by the ``verify`` CLI subcommand and the test suite.  Every check
returns a ``CheckResult`` so callers can print one pass/fail line each.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, finite_diff_check
from .data import ObservationProtocol, SyntheticSpec, generate_synthetic
from .graph import GlobalGraph, bfs_khop_oracle, induced_partial_subgraph, khop_neighbors
from .infomax import cgd_random_trials, gd_loss, infonce_loss, khop_loss
from .models import ModelConfig, build_model
from .data import sample_observed


@dataclass
class CheckResult:
    name: str
    value: float
    limit: float
    ok: bool

    def line(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        return f"[{status}] {self.name}: {self.value:.3g} (limit {self.limit:.3g})"


GRADIENT_LIMIT = 1e-4

ALL_VARIANTS = (
    "ps-dgi",
    "ps-infograph",
    "ps-mvgrl",
    "ps-graphcl",
    "khop",
    "khop+ps-dgi",
    "khop+ps-infograph",
)


def _op_checks(rng: np.random.Generator) -> list[tuple[str, Callable[[], Tensor], list[Tensor]]]:
    """One scalar closure per registered differentiable op, random shapes <= 16x16."""

    def rand(rows, cols):
        return Tensor(rng.normal(0.0, 1.0, size=(rows, cols)), requires_grad=True)

    n, m, k = (int(rng.integers(2, 17)) for _ in range(3))
    a = rand(n, m)
    b = rand(m, k)
    c = rand(n, m)
    # Strictly positive inputs keep log/sqrt probes away from 0.
    pos = Tensor(np.abs(rng.normal(0.0, 1.0, size=(n, m))) + 0.5, requires_grad=True)
    bias = rand(1, m)
    col = rand(n, 1)
    seg_ids = rng.integers(0, 4, size=n)
    gather_idx = rng.integers(0, n, size=n + 2)

    checks = [
        ("matmul", lambda: ad.sum_all(ad.matmul(a, b)), [a, b]),
        ("add", lambda: ad.sum_all(ad.add(a, bias)), [a, bias]),
        ("mul", lambda: ad.sum_all(ad.mul(a, c)), [a, c]),
        ("div", lambda: ad.sum_all(ad.div(a, pos)), [a, pos]),
        ("scale", lambda: ad.sum_all(ad.scale(a, 1.7)), [a]),
        ("relu", lambda: ad.sum_all(ad.relu(a)), [a]),
        ("sigmoid", lambda: ad.sum_all(ad.sigmoid(a)), [a]),
        ("log", lambda: ad.sum_all(ad.log(pos)), [pos]),
        ("exp", lambda: ad.sum_all(ad.exp(a)), [a]),
        ("sqrt", lambda: ad.sum_all(ad.sqrt(pos)), [pos]),
        ("log_sigmoid", lambda: ad.sum_all(ad.log_sigmoid(a)), [a]),
        ("softmax_rows", lambda: ad.sum_all(ad.mul(ad.softmax_rows(a), c)), [a]),
        ("logsumexp_rows", lambda: ad.sum_all(ad.logsumexp_rows(a)), [a]),
        ("mean_rows", lambda: ad.sum_all(ad.mul(ad.mean_rows(a), bias)), [a]),
        ("sum_rows", lambda: ad.sum_all(ad.mul(ad.sum_rows(a), bias)), [a]),
        ("row_sums", lambda: ad.sum_all(ad.mul(ad.row_sums(a), col)), [a]),
        ("mean_all", lambda: ad.mean_all(ad.mul(a, a)), [a]),
        ("concat_cols", lambda: ad.sum_all(ad.mul(ad.concat_cols(a, c), ad.concat_cols(c, a))), [a, c]),
        ("concat_rows", lambda: ad.sum_all(ad.mul(ad.concat_rows(a, c), ad.concat_rows(c, a))), [a, c]),
        ("gather_rows", lambda: ad.sum_all(ad.mul(ad.gather_rows(a, gather_idx), ad.gather_rows(c, gather_idx))), [a]),
        ("segment_sum", lambda: ad.sum_all(ad.mul(ad.segment_sum(a, seg_ids, 4), ad.segment_sum(c, seg_ids, 4))), [a]),
        ("segment_mean", lambda: ad.sum_all(ad.mul(ad.segment_mean(a, seg_ids, 4), ad.segment_mean(c, seg_ids, 4))), [a]),
        ("transpose", lambda: ad.sum_all(ad.matmul(ad.transpose(a), c)), [a, c]),
        ("clip_min", lambda: ad.sum_all(ad.clip_min(a, 0.25)), [a]),
        ("gd_loss", lambda: gd_loss(col, ad.mul(col, col)), [col]),
        ("infonce_loss", lambda: infonce_loss(col, ad.concat_cols(col, ad.mul(col, col))), [col]),
        ("khop_loss", lambda: khop_loss(col, ad.mul(col, col)), [col]),
    ]
    return checks


def gradient_op_report(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    for name, fn, params in _op_checks(rng):
        err = finite_diff_check(fn, params)
        results.append(CheckResult(f"grad/{name}", err, GRADIENT_LIMIT, err < GRADIENT_LIMIT))
    return results


def _toy_spec(seed: int) -> SyntheticSpec:
    return SyntheticSpec(
        num_nodes=14,
        communities=2,
        p_intra=0.6,
        p_inter=0.2,
        num_subgraphs=4,
        subgraph_size_min=4,
        subgraph_size_max=5,
        n_obs=2,
        feature_dim=3,
        feature_noise=0.2,
        community_leak=0.2,
        seed=seed,
    )


def _toy_model_config(variant: str) -> ModelConfig:
    return ModelConfig(
        variant=variant,
        hidden_dim=4,
        dropout=0.0,       # deterministic closures for finite differences
        p_d=0.0,
        pool_ratio=0.5,
        aug_p=0.2,
        ppr_top_t=4,
        temperature=0.5,
    )


def model_gradient_closure(variant: str, seed: int = 0):
    """A deterministic scalar training objective for one model variant.

    Rebuilds the forward graph on every call with a fresh, identically
    seeded rng, so finite differences see a fixed function of the
    parameters.  Returns (closure, trainable parameter tensors).
    """
    bundle = generate_synthetic(_toy_spec(seed))
    protocol = ObservationProtocol(n_obs=2, train_jitter=False, eval_fixed_seed=seed)
    model = build_model(
        _toy_model_config(variant),
        bundle.graph,
        bundle.num_classes,
        bundle.feature_dim,
        np.random.default_rng(seed + 17),
        embedding_values=bundle.embedding_values,
    )
    records = bundle.records[:3]
    sampler = np.random.default_rng(seed + 23)
    partials = [
        induced_partial_subgraph(
            rec, sample_observed(rec, protocol, "train", sampler), parent_index=i
        )
        for i, rec in enumerate(records)
    ]

    def closure() -> Tensor:
        rng = np.random.default_rng(seed + 31)
        context = model.prepare_batch(records, rng, training=True)
        out = model.step(
            records[0], partials[0], batch=context.for_target(0), rng=rng, training=True
        )
        return out.objective

    return closure, model.store.trainable()


def gradient_model_report(seed: int = 0) -> list[CheckResult]:
    results = []
    for variant in ALL_VARIANTS:
        closure, params = model_gradient_closure(variant, seed)
        err = finite_diff_check(closure, params)
        results.append(
            CheckResult(f"grad/model/{variant}", err, GRADIENT_LIMIT, err < GRADIENT_LIMIT)
        )
    return results


def _random_er_graph(rng: np.random.Generator, max_nodes: int = 200) -> GlobalGraph:
    n = int(rng.integers(5, max_nodes + 1))
    density = rng.uniform(0.01, 0.2)
    iu, ju = np.triu_indices(n, k=1)
    mask = rng.random(iu.size) < density
    edges = []
    for u, v in zip(iu[mask], ju[mask]):
        edges.append((int(u), int(v)))
        edges.append((int(v), int(u)))
    return GlobalGraph(n, edges)


def khop_oracle_report(graphs: int = 100, seed: int = 0, max_nodes: int = 200) -> CheckResult:
    """Exact set equality of the neighborhood sampler against brute-force BFS."""
    rng = np.random.default_rng(seed)
    mismatches = 0
    for _ in range(graphs):
        graph = _random_er_graph(rng, max_nodes)
        k = int(rng.integers(1, 4))
        n_obs = int(rng.integers(1, min(6, graph.num_nodes) + 1))
        observed = rng.choice(graph.num_nodes, size=n_obs, replace=False)
        fast = khop_neighbors(graph, observed, k, cap=None, p_d=0.0)
        slow = bfs_khop_oracle(graph, observed, k)
        if set(fast.neighbors) != set(slow):
            mismatches += 1
    return CheckResult("khop-vs-bfs-oracle", mismatches, 0.5, mismatches == 0)


def cgd_report(trials: int = 1000, seed: int = 0) -> CheckResult:
    violations = cgd_random_trials(trials, np.random.default_rng(seed))
    return CheckResult("conditional-gd-bound", violations, 0.5, violations == 0)


def loss_value_report() -> list[CheckResult]:
    """Closed-form loss values at degenerate scores."""
    two_ln2 = gd_loss(np.zeros(3), np.zeros(5)).item()
    k = 7
    nce = infonce_loss(np.zeros((2, 1)), np.zeros((2, k))).item()
    balanced = khop_loss(np.zeros(2), np.zeros(2)).item()
    return [
        CheckResult("gd-zero-scores", abs(two_ln2 - 2 * math.log(2)), 1e-9,
                    abs(two_ln2 - 2 * math.log(2)) < 1e-9),
        CheckResult("infonce-uniform", abs(nce - math.log(k + 1)), 1e-9,
                    abs(nce - math.log(k + 1)) < 1e-9),
        CheckResult("khop-balanced", abs(balanced - math.log(2)), 1e-9,
                    abs(balanced - math.log(2)) < 1e-9),
    ]


def run_all(seed: int = 0, cgd_trials: int = 1000, oracle_graphs: int = 100) -> list[CheckResult]:
    results = []
    results.extend(loss_value_report())
    results.extend(gradient_op_report(seed))
    results.extend(gradient_model_report(seed))
    results.append(khop_oracle_report(graphs=oracle_graphs, seed=seed))
    results.append(cgd_report(trials=cgd_trials, seed=seed))
    return results
