"""Training loop, evaluation, significance testing, and sweep harnesses.

Everything emitted is a deterministic function of (config, seed) on a given
platform.  Seeds are independent: each run owns its model, tape, and rng.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import platform
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import scipy.stats

from . import __version__
from . import autodiff as ad
from .layers import positional_max_length
from .data import (
    DatasetBundle,
    ExpectedStats,
    ObservationProtocol,
    SyntheticSpec,
    generate_synthetic,
    load_dataset,
    sample_observed,
)
from .graph import induced_partial_subgraph
from .models import ModelConfig, StepOutput, build_model
from .optim import AdamConfig, adam_step

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "dataset",
    "model",
    "seed",
    "n_obs_train",
    "n_obs_test",
    "lambda_khop",
    "lambda_second",
    "split",
    "accuracy",
)


@dataclass(frozen=True)
class DatasetFiles:
    edge_file: str
    subgraph_file: str
    embedding_file: str | None = None
    split_file: str | None = None
    split_ratios: tuple[float, float, float] = (0.7, 0.15, 0.15)
    split_seed: int = 0
    directed: bool = False
    expected: ExpectedStats | None = None


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    protocol: ObservationProtocol = field(default_factory=ObservationProtocol)
    synthetic: SyntheticSpec | None = field(default_factory=SyntheticSpec)
    files: DatasetFiles | None = None
    adam: AdamConfig = field(default_factory=AdamConfig)
    epochs: int = 100
    batch_size: int = 16
    grad_accum: int = 1
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    embedding_trainable: bool = True
    out_dir: str | None = None

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if not self.seeds:
            raise ValueError("seeds must be nonempty")
        if self.batch_size < 1 or self.grad_accum < 1:
            raise ValueError("batch_size and grad_accum must be >= 1")
        if self.synthetic is None and self.files is None:
            raise ValueError("a dataset source (synthetic or files) is required")


@dataclass
class SeedResult:
    seed: int
    test_accuracy: float
    best_epoch: int
    val_accuracy: list[float]
    loss_trace: dict[str, list[float]]
    diverged: bool = False


@dataclass
class MetricsRecord:
    """Per-seed test accuracies plus loss traces; mean/std are derived."""

    per_seed: list[SeedResult]

    @property
    def accuracies(self) -> list[float]:
        return [s.test_accuracy for s in self.per_seed]

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std(self) -> float:
        return float(np.std(self.accuracies))

    @property
    def any_diverged(self) -> bool:
        return any(s.diverged for s in self.per_seed)


def load_bundle(config: RunConfig) -> DatasetBundle:
    if config.files is not None:
        files = config.files
        split = files.split_file or (files.split_ratios, files.split_seed)
        return load_dataset(
            files.edge_file,
            files.subgraph_file,
            embeddings=files.embedding_file,
            split=split,
            directed=files.directed,
            expected=files.expected,
        )
    return generate_synthetic(config.synthetic)


def _build_model(config: RunConfig, bundle: DatasetBundle, rng: np.random.Generator):
    if bundle.feature_dim is None:
        raise ValueError("the bundle carries no node features or embedding table")
    model_cfg = config.model
    if model_cfg.use_positional_encoding:
        # Scale the positional budget with the observation target (+2 jitter).
        needed = positional_max_length(config.protocol.n_obs + 2)
        if needed > model_cfg.max_positions:
            model_cfg = dataclasses.replace(model_cfg, max_positions=needed)
    return build_model(
        model_cfg,
        bundle.graph,
        bundle.num_classes,
        bundle.feature_dim,
        rng,
        embedding_values=bundle.embedding_values,
        embedding_trainable=config.embedding_trainable,
        g_dim=bundle.g_dim,
    )


def _loss_keys(out: StepOutput) -> dict[str, float]:
    keys = {"graph": out.loss_graph}
    if out.loss_infomax is not None:
        keys["infomax"] = out.loss_infomax
    if out.loss_khop is not None:
        keys["khop"] = out.loss_khop
    if out.loss_second is not None:
        keys["second"] = out.loss_second
    return keys


def train_single_seed(
    config: RunConfig, bundle: DatasetBundle, seed: int
) -> tuple[SeedResult, object]:
    """Train one seed; returns its metrics and the best-checkpoint model."""
    rng = np.random.default_rng(seed)
    model = _build_model(config, bundle, rng)
    protocol = config.protocol
    train_indices = bundle.indices("train")
    if not train_indices:
        raise ValueError("the training split is empty")

    best_val = -1.0
    best_epoch = -1
    best_snapshot = model.store.clone_values()
    val_curve: list[float] = []
    traces: dict[str, list[float]] = {}
    diverged = False

    for epoch in range(config.epochs):
        order = rng.permutation(train_indices)
        epoch_sums: dict[str, float] = {}
        epoch_count = 0
        micro_batches = 0
        for start in range(0, len(order), config.batch_size):
            batch_idx = [int(i) for i in order[start : start + config.batch_size]]
            records = [bundle.records[i] for i in batch_idx]
            context = model.prepare_batch(records, rng, training=True)
            objectives = []
            for pos, (rec_idx, record) in enumerate(zip(batch_idx, records)):
                observed = sample_observed(record, protocol, "train", rng)
                partial = induced_partial_subgraph(
                    record, observed, parent_index=rec_idx, graph=bundle.graph,
                    use_global_edges=config.model.use_global_induced_edges,
                )
                out = model.step(
                    record, partial, batch=context.for_target(pos),
                    rng=rng, training=True,
                )
                objectives.append(out.objective)
                for key, value in _loss_keys(out).items():
                    epoch_sums[key] = epoch_sums.get(key, 0.0) + value
                epoch_count += 1
            batch_obj = objectives[0]
            for extra in objectives[1:]:
                batch_obj = ad.add(batch_obj, extra)
            batch_obj = ad.scale(batch_obj, 1.0 / (len(objectives) * config.grad_accum))
            if not math.isfinite(batch_obj.item()):
                log.error("seed %d diverged at epoch %d; aborting this seed", seed, epoch)
                diverged = True
                break
            ad.backward(batch_obj)
            micro_batches += 1
            if micro_batches % config.grad_accum == 0:
                adam_step(model.store, config.adam)
        if diverged:
            break
        if micro_batches % config.grad_accum:
            adam_step(model.store, config.adam)

        for key, total in epoch_sums.items():
            traces.setdefault(key, []).append(total / epoch_count)
        val_acc = evaluate(model, bundle, protocol, "val")
        val_curve.append(val_acc)
        if val_acc > best_val:
            best_val = val_acc
            best_epoch = epoch
            best_snapshot = model.store.clone_values()

    model.store.load_values(best_snapshot)
    test_acc = evaluate(model, bundle, protocol, "test") if not diverged else float("nan")
    result = SeedResult(
        seed=seed,
        test_accuracy=test_acc,
        best_epoch=best_epoch,
        val_accuracy=val_curve,
        loss_trace=traces,
        diverged=diverged,
    )
    return result, model


def train(config: RunConfig, bundle: DatasetBundle | None = None) -> MetricsRecord:
    """Run every seed; divergent seeds are flagged and the rest continue."""
    bundle = bundle if bundle is not None else load_bundle(config)
    results = []
    for seed in config.seeds:
        result, model = train_single_seed(config, bundle, seed)
        results.append(result)
        if config.out_dir:
            out = Path(config.out_dir)
            out.mkdir(parents=True, exist_ok=True)
            model.store.save(out / f"params_seed{seed}.json")
    return MetricsRecord(per_seed=results)


def evaluate(
    model,
    bundle: DatasetBundle,
    protocol: ObservationProtocol,
    stage: str,
) -> float:
    """Accuracy over a stage's frozen partial observations; deterministic."""
    indices = bundle.indices(stage)
    if not indices:
        raise ValueError(f"stage {stage!r} has no records")
    frozen = bundle.frozen_eval(protocol, stage)
    correct = 0
    for idx in indices:
        record = bundle.records[idx]
        partial = induced_partial_subgraph(
            record, frozen[idx], parent_index=idx, graph=bundle.graph,
            use_global_edges=model.config.use_global_induced_edges,
        )
        # Fresh per-record rng: only consumed if neighborhood capping binds.
        rng = np.random.default_rng([protocol.eval_fixed_seed, 104729, idx])
        out = model.step(record, partial, rng=rng, training=False)
        if int(np.argmax(out.logits)) == record.label:
            correct += 1
    return correct / len(indices)


def unpaired_t_test(sample_a, sample_b) -> float:
    """Welch's two-sided unpaired t-test p-value.

    Zero variance on both sides is a convention case: p = 1.0 for equal
    means, 0.0 otherwise.
    """
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise ValueError("each sample needs at least 2 values")
    if a.var(ddof=1) == 0.0 and b.var(ddof=1) == 0.0:
        return 1.0 if a.mean() == b.mean() else 0.0
    return float(scipy.stats.ttest_ind(a, b, equal_var=False).pvalue)


def _run_rows(
    config: RunConfig,
    metrics: MetricsRecord,
    n_obs_train: int,
    n_obs_test: int,
    dataset_name: str,
) -> list[dict]:
    rows = []
    for result in metrics.per_seed:
        rows.append(
            {
                "dataset": dataset_name,
                "model": config.model.variant,
                "seed": result.seed,
                "n_obs_train": n_obs_train,
                "n_obs_test": n_obs_test,
                "lambda_khop": config.model.lambda_khop,
                "lambda_second": config.model.lambda_second,
                "split": "test",
                "accuracy": result.test_accuracy,
            }
        )
    return rows


def write_csv(path, rows: list[dict], columns=CSV_COLUMNS) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def _summarize(rows: list[dict], cell_keys: tuple[str, ...]) -> list[dict]:
    cells: dict[tuple, list[float]] = {}
    meta: dict[tuple, dict] = {}
    for row in rows:
        key = tuple(row[k] for k in cell_keys)
        cells.setdefault(key, []).append(row["accuracy"])
        meta[key] = {k: row[k] for k in cell_keys}
    summary = []
    for key in sorted(cells):
        accs = cells[key]
        entry = dict(meta[key])
        entry["mean_accuracy"] = float(np.mean(accs))
        entry["std_accuracy"] = float(np.std(accs))
        entry["n_seeds"] = len(accs)
        summary.append(entry)
    return summary


def sweep_observed(
    config: RunConfig,
    sizes: list[int],
    out_dir=None,
    bundle: DatasetBundle | None = None,
) -> list[dict]:
    """Grid over train-size x test-size observed-node counts.

    Each train size is trained once per seed; every test size is then
    evaluated against its own frozen observation sets.  Sizes larger than
    every subgraph are clamped by the sampler (with a warning here).
    """
    if not sizes:
        raise ValueError("sizes must be nonempty")
    bundle = bundle if bundle is not None else load_bundle(config)
    max_size = max(len(r.node_ids) for r in bundle.records)
    for size in sizes:
        if size > max_size:
            log.warning("observed size %d exceeds every subgraph; it will clamp", size)
    rows = []
    for train_size in sizes:
        train_protocol = ObservationProtocol(
            n_obs=train_size,
            ordered=config.protocol.ordered,
            train_jitter=config.protocol.train_jitter,
            eval_fixed_seed=config.protocol.eval_fixed_seed,
        )
        cfg = RunConfig(
            model=config.model,
            protocol=train_protocol,
            synthetic=config.synthetic,
            files=config.files,
            adam=config.adam,
            epochs=config.epochs,
            batch_size=config.batch_size,
            grad_accum=config.grad_accum,
            seeds=config.seeds,
            embedding_trainable=config.embedding_trainable,
        )
        for seed in cfg.seeds:
            result, model = train_single_seed(cfg, bundle, seed)
            for test_size in sizes:
                test_protocol = ObservationProtocol(
                    n_obs=test_size,
                    ordered=config.protocol.ordered,
                    train_jitter=config.protocol.train_jitter,
                    eval_fixed_seed=config.protocol.eval_fixed_seed,
                )
                accuracy = (
                    evaluate(model, bundle, test_protocol, "test")
                    if not result.diverged
                    else float("nan")
                )
                rows.append(
                    {
                        "dataset": bundle.name,
                        "model": cfg.model.variant,
                        "seed": seed,
                        "n_obs_train": train_size,
                        "n_obs_test": test_size,
                        "lambda_khop": cfg.model.lambda_khop,
                        "lambda_second": cfg.model.lambda_second,
                        "split": "test",
                        "accuracy": accuracy,
                    }
                )
    summary = _summarize(rows, ("n_obs_train", "n_obs_test"))
    for entry in summary:
        entry["dataset"] = bundle.name
        entry["model"] = config.model.variant
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "observed_sweep_runs.csv", rows)
        write_csv(
            out / "observed_sweep_summary.csv",
            summary,
            columns=(
                "dataset", "model", "n_obs_train", "n_obs_test",
                "mean_accuracy", "std_accuracy", "n_seeds",
            ),
        )
    return summary


def sweep_lambda(
    config: RunConfig,
    lambda_khop_grid: list[float],
    lambda_second_grid: list[float],
    out_dir=None,
    bundle: DatasetBundle | None = None,
) -> list[dict]:
    """Grid over the k-hop and second-stage loss weights."""
    if not lambda_khop_grid or not lambda_second_grid:
        raise ValueError("both lambda grids must be nonempty")
    bundle = bundle if bundle is not None else load_bundle(config)
    rows = []
    for lam_k in lambda_khop_grid:
        for lam_2 in lambda_second_grid:
            model_cfg = ModelConfig(
                **{
                    **asdict(config.model),
                    "lambda_khop": lam_k,
                    "lambda_second": lam_2,
                }
            )
            cfg = RunConfig(
                model=model_cfg,
                protocol=config.protocol,
                synthetic=config.synthetic,
                files=config.files,
                adam=config.adam,
                epochs=config.epochs,
                batch_size=config.batch_size,
                grad_accum=config.grad_accum,
                seeds=config.seeds,
                embedding_trainable=config.embedding_trainable,
            )
            metrics = train(cfg, bundle=bundle)
            rows.extend(
                _run_rows(cfg, metrics, config.protocol.n_obs, config.protocol.n_obs, bundle.name)
            )
    summary = _summarize(rows, ("lambda_khop", "lambda_second"))
    for entry in summary:
        entry["dataset"] = bundle.name
        entry["model"] = config.model.variant
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "lambda_sweep_runs.csv", rows)
        write_csv(
            out / "lambda_sweep_summary.csv",
            summary,
            columns=(
                "dataset", "model", "lambda_khop", "lambda_second",
                "mean_accuracy", "std_accuracy", "n_seeds",
            ),
        )
    return summary


def write_manifest(out_dir, config: RunConfig, started: float, extra: dict | None = None) -> str:
    """JSON run manifest: config echo, seeds, versions, wall time."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "config": _config_dict(config),
        "seeds": list(config.seeds),
        "versions": {
            "subgraph_infomax": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
        "wall_time_seconds": time.time() - started,
    }
    if extra:
        manifest.update(extra)
    path = out / "manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, default=str)
    return str(path)


def _config_dict(config: RunConfig) -> dict:
    data = asdict(config)
    return data
