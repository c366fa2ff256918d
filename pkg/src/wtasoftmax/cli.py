"""Command-line interface: train, eval, bench and index-stats.

Runs are driven by a JSON config file; unknown keys are rejected so
typos fail fast instead of silently using defaults.  ``--set a.b=v``
flags override individual config keys.  Every artifact directory gets
an ``effective_config.json`` echo with all defaults resolved, and all
outputs are written atomically so a failed run never leaves partial
files.

Exit codes: 0 success, 1 usage/config errors, 2 runtime failures.
"""

import argparse
import copy
import csv
import io
import json
import os
import sys

import numpy as np

from .bench import BenchReport, bench_forward, config_hash
from .data import Dataset, gen_clustered, load_dataset, load_dataset_text
from .errors import ConfigError, UsageError, WtaSoftmaxError
from .metrics import precision_at_k, rank_exact, rank_hs, rank_sparse
from .serialize import (
    atomic_write_text,
    load_checkpoint,
    save_checkpoint,
)
from .train import TrainConfig, make_trainer, run_training, write_train_log
from .wta import WtaParams

PROFILES = {
    "paper": {"window_size": 16, "n_perms": 3000, "n_bands": 1000},
    "desk": {"window_size": 16, "n_perms": 120, "n_bands": 40},
}

_TRAIN_DEFAULTS = {
    "lr": 0.001, "lr_decay": 1.0, "decay_interval": 1000, "momentum": 0.9,
    "batch_size": 1, "top_k": 50, "rehash_batch": None, "steps": 100,
    "seed": 0,
}

_SCHEMA = {
    "profile": str,
    "layer": str,
    "mode": str,
    "seed": int,
    "out_dir": str,
    "hash": {"window_size": int, "n_perms": int, "n_bands": int, "seed": int},
    "train": {k: (type(v) if v is not None else int)
              for k, v in _TRAIN_DEFAULTS.items()},
    "data": {
        "path": str,
        "synthetic": {"n_classes": int, "dim": int, "per_class": int,
                      "spread": float, "seed": int},
    },
    "bench": {"n_classes": int, "dim": int, "batch_sizes": list,
              "top_ks": list, "repetitions": int, "warmup": int, "seed": int},
}


def _validate_keys(config: dict, schema: dict, path: str = "") -> None:
    for key, value in config.items():
        where = f"{path}.{key}" if path else key
        if key not in schema:
            raise ConfigError(f"unknown config key {where!r}")
        expected = schema[key]
        if isinstance(expected, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be an object")
            _validate_keys(value, expected, where)


def load_config(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            config = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(config, dict):
        raise ConfigError("config root must be a JSON object")
    _validate_keys(config, _SCHEMA)
    return config


def _coerce(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(config: dict, overrides) -> dict:
    """Apply ``section.key=value`` pairs; values parse as JSON when possible."""
    config = copy.deepcopy(config)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        dotted, _, raw = item.partition("=")
        keys = dotted.split(".")
        node = config
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot override through scalar key {key!r}")
        node[keys[-1]] = _coerce(raw)
    _validate_keys(config, _SCHEMA)
    return config


def resolve_hash_params(config: dict, dim: int) -> WtaParams:
    profile = config.get("profile", "desk")
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    fields = dict(PROFILES[profile])
    fields["seed"] = config.get("seed", 0)
    fields.update(config.get("hash", {}))
    return WtaParams(dim=dim, **fields)


def resolve_train_config(config: dict) -> TrainConfig:
    fields = dict(_TRAIN_DEFAULTS)
    fields.update(config.get("train", {}))
    return TrainConfig(**fields)


def load_any_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == b"WTDS":
        return load_dataset(path)
    return load_dataset_text(path)


def resolve_dataset(config: dict) -> Dataset:
    data_cfg = config.get("data")
    if not data_cfg:
        raise ConfigError("config needs a 'data' section")
    if "path" in data_cfg and "synthetic" in data_cfg:
        raise ConfigError("'data' must give either 'path' or 'synthetic', not both")
    if "path" in data_cfg:
        return load_any_dataset(data_cfg["path"])
    if "synthetic" in data_cfg:
        spec = dict(data_cfg["synthetic"])
        spec.setdefault("seed", config.get("seed", 0))
        return gen_clustered(**spec)
    raise ConfigError("'data' must give 'path' or 'synthetic'")


def _echo_config(config: dict, out_dir: str, extra: dict) -> None:
    effective = copy.deepcopy(config)
    effective["resolved"] = extra
    atomic_write_text(os.path.join(out_dir, "effective_config.json"),
                      json.dumps(effective, indent=2, sort_keys=True,
                                 default=str) + "\n")


def cmd_train(args) -> int:
    config = apply_overrides(load_config(args.config), args.set)
    layer = config.get("layer", "wta")
    mode = config.get("mode", "softmax")
    if layer not in ("wta", "exact", "hs"):
        raise ConfigError(f"unknown layer kind {layer!r}")
    if mode != "softmax" and layer != "wta":
        raise ConfigError("logistic mode is only available for the wta layer")
    dataset = resolve_dataset(config)
    if len(dataset) == 0:
        raise UsageError("dataset is empty")
    train_cfg = resolve_train_config(config)
    hash_params = None
    if layer == "wta":
        hash_params = resolve_hash_params(config, dataset.dim)
    trainer = make_trainer(layer, train_cfg, dataset.n_classes, dataset.dim,
                           hash_params=hash_params, mode=mode)
    history = run_training(trainer, dataset)

    out_dir = config.get("out_dir", args.out_dir or ".")
    os.makedirs(out_dir, exist_ok=True)
    write_train_log(history, os.path.join(out_dir, "train_log.csv"))
    save_checkpoint(trainer.checkpoint(), os.path.join(out_dir, "checkpoint.bin"))
    _echo_config(config, out_dir, {
        "layer": layer, "mode": mode,
        "train": train_cfg.__dict__,
        "hash": None if hash_params is None else hash_params.__dict__,
        "dataset": {"examples": len(dataset), "dim": dataset.dim,
                    "n_classes": dataset.n_classes},
    })
    print(f"trained {layer} layer for {len(history)} steps -> {out_dir}")
    return 0


def _parse_metrics(tokens) -> list[tuple[str, int]]:
    parsed = []
    for tok in tokens:
        tok = tok.strip()
        if tok == "accuracy":
            parsed.append(("accuracy", 1))
        elif tok.startswith("precision@"):
            parsed.append((tok, int(tok.split("@", 1)[1])))
        else:
            raise ConfigError(f"unknown metric {tok!r}")
    return parsed


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    dataset = load_any_dataset(args.data)
    if len(dataset) == 0:
        raise UsageError("dataset is empty")
    mode = args.mode or ckpt.kind
    metrics = _parse_metrics((args.metrics or "accuracy").split(","))
    max_k = max(k for _, k in metrics)
    X = dataset.features.astype(np.float64)

    miss_before = 0
    if mode == "exact":
        if ckpt.model is None:
            raise UsageError("checkpoint has no parameter matrix")
        ranked = rank_exact(ckpt.model, X, max_k)
    elif mode == "wta":
        if ckpt.model is None or ckpt.index is None:
            raise UsageError("checkpoint has no hash index")
        retrieve_k = args.top_k if args.top_k else max_k
        miss_before = ckpt.index.miss_count
        ranked = rank_sparse(ckpt.model, ckpt.index, X, max_k,
                             retrieve_k=retrieve_k)
    elif mode == "hs":
        if ckpt.tree is None:
            raise UsageError("checkpoint has no tree")
        ranked = rank_hs(ckpt.tree, X, max_k)
    else:
        raise ConfigError(f"unknown eval mode {mode!r}")

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["metric", "value"])
    for name, k in metrics:
        writer.writerow([name, "%.6f" % precision_at_k(ranked, dataset.labels, k)])
    writer.writerow(["examples", len(dataset)])
    if mode == "wta":
        writer.writerow(["retrieval_misses", ckpt.index.miss_count - miss_before])
    out = args.out or "metrics.csv"
    atomic_write_text(out, buf.getvalue())
    print(buf.getvalue(), end="")
    return 0


def cmd_bench(args) -> int:
    config = apply_overrides(load_config(args.config), args.set)
    bench_cfg = config.get("bench")
    if not bench_cfg:
        raise ConfigError("config needs a 'bench' section")
    spec = {"n_classes": 10000, "dim": 64, "batch_sizes": [1, 8, 32],
            "top_ks": [30, 300], "repetitions": 30, "warmup": 5,
            "seed": config.get("seed", 0)}
    spec.update(bench_cfg)
    hash_params = resolve_hash_params(config, spec["dim"])
    report = bench_forward(
        n_classes=spec["n_classes"], dim=spec["dim"],
        batch_sizes=spec["batch_sizes"], top_ks=spec["top_ks"],
        hash_params=hash_params, repetitions=spec["repetitions"],
        warmup=spec["warmup"], seed=spec["seed"])
    out = args.out or "bench_report.csv"
    report.save_csv(out)
    out_dir = os.path.dirname(out) or "."
    _echo_config(config, out_dir, {"bench": spec,
                                   "config_hash": report.meta["config_hash"]})
    print(report.to_csv(), end="")
    return 0


def cmd_index_stats(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    if ckpt.index is None:
        raise UsageError("checkpoint has no hash index")
    stats = ckpt.index.stats()
    lines = [
        f"classes indexed:     {stats.n_classes}",
        f"tables:              {stats.n_tables}",
        f"occupied buckets:    {stats.n_buckets}",
        f"max bucket size:     {stats.max_bucket}",
        f"mean bucket size:    {stats.mean_bucket:.3f}",
        f"empty band fraction: {stats.empty_band_fraction:.6f}",
        f"queries:             {stats.query_count}",
        f"retrieval misses:    {stats.miss_count}",
    ]
    print("\n".join(lines))
    if args.out:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["bucket_size", "count"])
        for size, count in enumerate(stats.bucket_size_hist):
            if count:
                writer.writerow([size, int(count)])
        atomic_write_text(args.out, buf.getvalue())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wtasoftmax",
        description="Hash-retrieved softmax layers: train, evaluate, benchmark.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a layer from a JSON config")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--out-dir", default=None)
    p_train.add_argument("--set", action="append", metavar="KEY=VALUE")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--top-k", type=int, default=None,
                        help="classes to retrieve in wta mode")
    p_eval.add_argument("--metrics", default="accuracy",
                        help="comma list: accuracy, precision@K")
    p_eval.add_argument("--mode", choices=["exact", "wta", "hs"], default=None)
    p_eval.add_argument("--out", default=None)
    p_eval.set_defaults(func=cmd_eval)

    p_bench = sub.add_parser("bench", help="run the forward-pass benchmark")
    p_bench.add_argument("--config", required=True)
    p_bench.add_argument("--out", default=None)
    p_bench.add_argument("--set", action="append", metavar="KEY=VALUE")
    p_bench.set_defaults(func=cmd_bench)

    p_stats = sub.add_parser("index-stats",
                             help="bucket occupancy and miss-rate stats")
    p_stats.add_argument("--checkpoint", required=True)
    p_stats.add_argument("--out", default=None)
    p_stats.set_defaults(func=cmd_index_stats)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except (ConfigError, UsageError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except WtaSoftmaxError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
