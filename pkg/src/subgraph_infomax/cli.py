"""Command-line interface.

Subcommands: ``generate``, ``train``, ``evaluate``, ``sweep-observed``,
``sweep-lambda``, ``verify``.  Configuration comes from a plain-text
``key = value`` file plus repeatable ``--set key=value`` overrides; the
``SUBGRAPH_INFOMAX_OUT`` environment variable sets the default output root.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from .data import (
    ExpectedStats,
    ObservationProtocol,
    SyntheticSpec,
    generate_synthetic,
    save_bundle,
)
from .models import ModelConfig
from .optim import AdamConfig
from .train import (
    DatasetFiles,
    RunConfig,
    evaluate,
    load_bundle,
    sweep_lambda,
    sweep_observed,
    train,
    train_single_seed,
    unpaired_t_test,
    write_csv,
    write_manifest,
    _build_model,
    _run_rows,
)

log = logging.getLogger("subgraph_infomax")

# Config-file key -> (section, attribute).  "lambda" is the single-stage
# loss weight; the khop/second weights keep their long names.
MODEL_KEYS = {
    "variant": "variant",
    "estimator": "estimator",
    "k": "k",
    "pool_ratio": "pool_ratio",
    "lambda": "lambda_single",
    "lambda_khop": "lambda_khop",
    "lambda_second": "lambda_second",
    "p_d": "p_d",
    "aug_p": "aug_p",
    "ppr_alpha": "ppr_alpha",
    "ppr_top_t": "ppr_top_t",
    "temperature": "temperature",
    "hidden_dim": "hidden_dim",
    "use_positional_encoding": "use_positional_encoding",
    "dropout": "dropout",
    "neighbor_cap": "neighbor_cap",
    "max_positions": "max_positions",
    "premixer": "premixer",
    "include_observed_in_pool": "include_observed_in_pool",
    "concat_observed_summary": "concat_observed_summary",
    "use_global_induced_edges": "use_global_induced_edges",
    "bidirectional": "bidirectional",
}
PROTOCOL_KEYS = {
    "n_obs": "n_obs",
    "ordered": "ordered",
    "train_jitter": "train_jitter",
    "eval_seed": "eval_fixed_seed",
}
RUN_KEYS = {
    "epochs": "epochs",
    "batch_size": "batch_size",
    "grad_accum": "grad_accum",
    "embedding_trainable": "embedding_trainable",
}
ADAM_KEYS = {
    "learning_rate": "learning_rate",
    "weight_decay": "weight_decay",
    "beta1": "beta1",
    "beta2": "beta2",
}
SYNTHETIC_KEYS = {
    "synthetic_nodes": "num_nodes",
    "synthetic_communities": "communities",
    "synthetic_p_intra": "p_intra",
    "synthetic_p_inter": "p_inter",
    "synthetic_subgraphs": "num_subgraphs",
    "synthetic_size_min": "subgraph_size_min",
    "synthetic_size_max": "subgraph_size_max",
    "synthetic_n_obs": "n_obs",
    "synthetic_feature_dim": "feature_dim",
    "synthetic_noise": "feature_noise",
    "synthetic_leak": "community_leak",
    "synthetic_seed": "seed",
}
FILE_KEYS = ("edge_file", "subgraph_file", "embedding_file", "split_file")


def parse_kv_file(path) -> dict[str, str]:
    """Plain-text config: one ``key = value`` per line, '#' comments."""
    mapping: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            mapping[key.strip()] = value.strip()
    return mapping


def _coerce(value: str, target_type):
    if target_type is bool:
        lowered = value.lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {value!r}")
    if target_type is int:
        return int(value)
    if target_type is float:
        return float(value)
    return value


def _field_types(dc_cls) -> dict[str, type]:
    types = {}
    for f in fields(dc_cls):
        if f.type in ("int", int):
            types[f.name] = int
        elif f.type in ("float", float):
            types[f.name] = float
        elif f.type in ("bool", bool):
            types[f.name] = bool
        else:
            types[f.name] = str
    return types


def _collect(mapping: dict[str, str], keys: dict[str, str], dc_cls) -> dict:
    types = _field_types(dc_cls)
    out = {}
    for key, attr in keys.items():
        if key in mapping:
            raw = mapping[key]
            if attr == "neighbor_cap" and raw.lower() in ("none", "inf"):
                out[attr] = None
            else:
                out[attr] = _coerce(raw, types.get(attr, str))
    return out


def build_run_config(mapping: dict[str, str]) -> RunConfig:
    model = ModelConfig(**_collect(mapping, MODEL_KEYS, ModelConfig))
    protocol = ObservationProtocol(**_collect(mapping, PROTOCOL_KEYS, ObservationProtocol))
    adam = AdamConfig(**_collect(mapping, ADAM_KEYS, AdamConfig))
    run_kwargs = _collect(mapping, RUN_KEYS, RunConfig)
    if "seeds" in mapping:
        run_kwargs["seeds"] = tuple(int(s) for s in mapping["seeds"].split(",") if s)
    if "out_dir" in mapping:
        run_kwargs["out_dir"] = mapping["out_dir"]

    synthetic = None
    files = None
    if mapping.get("dataset", "synthetic") == "synthetic" and "edge_file" not in mapping:
        synthetic = SyntheticSpec(**_collect(mapping, SYNTHETIC_KEYS, SyntheticSpec))
    else:
        kwargs = {key: mapping[key] for key in FILE_KEYS if key in mapping}
        if "split_ratios" in mapping:
            kwargs["split_ratios"] = tuple(
                float(r) for r in mapping["split_ratios"].split(",")
            )
        if "split_seed" in mapping:
            kwargs["split_seed"] = int(mapping["split_seed"])
        if "directed" in mapping:
            kwargs["directed"] = _coerce(mapping["directed"], bool)
        expected_kwargs = {}
        for stat_key, attr in (
            ("expected_subgraphs", "num_subgraphs"),
            ("expected_classes", "num_classes"),
            ("expected_global_nodes", "num_global_nodes"),
        ):
            if stat_key in mapping:
                expected_kwargs[attr] = int(mapping[stat_key])
        if expected_kwargs:
            kwargs["expected"] = ExpectedStats(**expected_kwargs)
        files = DatasetFiles(**kwargs)
    return RunConfig(
        model=model, protocol=protocol, synthetic=synthetic, files=files,
        adam=adam, **run_kwargs,
    )


def _mapping_from_args(args) -> dict[str, str]:
    mapping: dict[str, str] = {}
    if getattr(args, "config", None):
        mapping.update(parse_kv_file(args.config))
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise SystemExit(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        mapping[key.strip()] = value.strip()
    return mapping


def _out_dir(args, default_name: str) -> Path:
    root = os.environ.get("SUBGRAPH_INFOMAX_OUT", "runs")
    out = Path(args.out) if getattr(args, "out", None) else Path(root) / default_name
    out.mkdir(parents=True, exist_ok=True)
    return out


def _add_config_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="plain-text key = value config file")
    parser.add_argument(
        "--set", action="append", metavar="KEY=VALUE",
        help="override a config key (repeatable)",
    )
    parser.add_argument("--out", help="output directory")


def cmd_generate(args) -> int:
    mapping = _mapping_from_args(args)
    spec = SyntheticSpec(**_collect(mapping, SYNTHETIC_KEYS, SyntheticSpec))
    bundle = generate_synthetic(spec)
    out = _out_dir(args, "synthetic")
    paths = save_bundle(bundle, out)
    for kind, path in paths.items():
        print(f"{kind}: {path}")
    return 0


def cmd_train(args) -> int:
    started = time.time()
    mapping = _mapping_from_args(args)
    config = build_run_config(mapping)
    out = _out_dir(args, "train")
    config.out_dir = str(out)
    bundle = load_bundle(config)
    metrics = train(config, bundle=bundle)
    rows = _run_rows(config, metrics, config.protocol.n_obs, config.protocol.n_obs, bundle.name)
    write_csv(out / "metrics.csv", rows)
    write_manifest(
        out, config, started,
        extra={"mean_accuracy": metrics.mean, "std_accuracy": metrics.std},
    )
    for result in metrics.per_seed:
        print(f"seed {result.seed}: test accuracy {result.test_accuracy:.4f}"
              + (" (diverged)" if result.diverged else ""))
    print(f"mean {metrics.mean:.4f} +/- {metrics.std:.4f}")
    return 0


def cmd_evaluate(args) -> int:
    mapping = _mapping_from_args(args)
    config = build_run_config(mapping)
    bundle = load_bundle(config)
    model = _build_model(config, bundle, np.random.default_rng(config.seeds[0]))
    model.store.load(args.checkpoint)
    accuracy = evaluate(model, bundle, config.protocol, args.stage)
    print(f"{args.stage} accuracy: {accuracy:.4f}")
    return 0


def cmd_sweep_observed(args) -> int:
    started = time.time()
    mapping = _mapping_from_args(args)
    config = build_run_config(mapping)
    sizes = [int(s) for s in args.sizes.split(",") if s]
    out = _out_dir(args, "sweep_observed")
    summary = sweep_observed(config, sizes, out_dir=out)
    write_manifest(out, config, started, extra={"sizes": sizes})
    for entry in summary:
        print(
            f"train {entry['n_obs_train']:>3} / test {entry['n_obs_test']:>3}: "
            f"{entry['mean_accuracy']:.4f} +/- {entry['std_accuracy']:.4f}"
        )
    return 0


def cmd_sweep_lambda(args) -> int:
    started = time.time()
    mapping = _mapping_from_args(args)
    config = build_run_config(mapping)
    grid_khop = [float(v) for v in args.grid_khop.split(",") if v]
    grid_second = [float(v) for v in args.grid_second.split(",") if v]
    out = _out_dir(args, "sweep_lambda")
    summary = sweep_lambda(config, grid_khop, grid_second, out_dir=out)
    write_manifest(out, config, started, extra={"grid_khop": grid_khop, "grid_second": grid_second})
    for entry in summary:
        print(
            f"lambda_khop {entry['lambda_khop']} / lambda_second {entry['lambda_second']}: "
            f"{entry['mean_accuracy']:.4f} +/- {entry['std_accuracy']:.4f}"
        )
    return 0


def cmd_verify(args) -> int:
    from .verify import run_all

    results = run_all(
        seed=args.seed, cgd_trials=args.cgd_trials, oracle_graphs=args.oracle_graphs
    )
    failures = 0
    for result in results:
        print(result.line())
        failures += not result.ok
    print(f"{len(results) - failures}/{len(results)} checks passed")
    return 1 if failures else 0


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = argparse.ArgumentParser(
        prog="subgraph-infomax",
        description="Train and evaluate partial-subgraph representation models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic bundle to disk")
    _add_config_args(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a model over the configured seeds")
    _add_config_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a saved checkpoint")
    _add_config_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--stage", default="test", choices=("train", "val", "test"))
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep-observed", help="grid over observed-node counts")
    _add_config_args(p)
    p.add_argument("--sizes", required=True, help="comma-separated sizes, e.g. 4,8")
    p.set_defaults(func=cmd_sweep_observed)

    p = sub.add_parser("sweep-lambda", help="grid over the loss-weight lambdas")
    _add_config_args(p)
    p.add_argument("--grid-khop", default="1,2,3")
    p.add_argument("--grid-second", default="1,2,3")
    p.set_defaults(func=cmd_sweep_lambda)

    p = sub.add_parser("verify", help="run the property suites")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cgd-trials", type=int, default=1000)
    p.add_argument("--oracle-graphs", type=int, default=100)
    p.set_defaults(func=cmd_verify)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
