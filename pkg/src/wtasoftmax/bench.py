"""Timing and trade-off harness for the output layers.

Cells measure the output layer alone (no feature computation), report
the median of >= 30 repetitions with interquartile spread, and mark a
cell unreliable when its median is too close to the timer's measured
resolution instead of silently reporting noise.  Hash-index build time
is reported as its own row since it amortises across all queries.

Speedup for a hashed cell is the exact-softmax median over the hashed
median at the same (n_classes, dim, batch).  Medians rather than means
keep scheduler noise out of the trend rows.
"""

import csv
import hashlib
import io
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .errors import ConfigError
from .layers import ParamMatrix, exact_softmax_batch, sparse_softmax_forward
from .lsh import LshIndex
from .metrics import rank_exact, rank_sparse, top1_accuracy
from .wta import WtaParams

CSV_COLUMNS = ("kind", "n_classes", "dim", "batch_size", "top_k",
               "median_ms", "iqr_ms", "speedup", "accuracy_fraction",
               "reliable")

# A cell is reliable when its median is at least this many timer ticks.
_MIN_TICKS = 100


@dataclass(frozen=True)
class BenchRow:
    kind: str
    n_classes: int
    dim: int
    batch_size: int | None
    top_k: int | None
    median_ms: float
    iqr_ms: float
    speedup: float | None = None
    accuracy_fraction: float | None = None
    reliable: bool = True


@dataclass
class BenchReport:
    rows: list[BenchRow] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in self.rows:
            writer.writerow([
                r.kind, r.n_classes, r.dim,
                "" if r.batch_size is None else r.batch_size,
                "" if r.top_k is None else r.top_k,
                "%.6f" % r.median_ms, "%.6f" % r.iqr_ms,
                "" if r.speedup is None else "%.4f" % r.speedup,
                "" if r.accuracy_fraction is None else "%.6f" % r.accuracy_fraction,
                int(r.reliable),
            ])
        return buf.getvalue()

    def save_csv(self, path) -> None:
        from .serialize import atomic_write_text
        atomic_write_text(path, self.to_csv())

    def row(self, kind: str, batch_size=None, top_k=None) -> BenchRow:
        for r in self.rows:
            if (r.kind == kind and (batch_size is None or r.batch_size == batch_size)
                    and (top_k is None or r.top_k == top_k)):
                return r
        raise KeyError(f"no row kind={kind} batch={batch_size} top_k={top_k}")


def config_hash(obj) -> str:
    """Stable short hash of a json-serialisable configuration."""
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def timer_resolution_ns(samples: int = 2000) -> int:
    """Smallest positive observed tick of the wall-clock timer."""
    best = None
    prev = time.perf_counter_ns()
    for _ in range(samples):
        now = time.perf_counter_ns()
        delta = now - prev
        if delta > 0 and (best is None or delta < best):
            best = delta
        prev = now
    return best if best is not None else 1


def _time_fn(fn, repetitions: int, warmup: int,
             resolution_ns: int) -> tuple[float, float, bool]:
    """(median_ms, iqr_ms, reliable) over ``repetitions`` calls."""
    for _ in range(warmup):
        fn()
    samples = np.empty(repetitions)
    for i in range(repetitions):
        t0 = time.perf_counter_ns()
        fn()
        samples[i] = time.perf_counter_ns() - t0
    median = float(np.median(samples))
    q25, q75 = np.percentile(samples, [25, 75])
    reliable = median >= _MIN_TICKS * resolution_ns
    return median / 1e6, float(q75 - q25) / 1e6, reliable


def bench_forward(n_classes: int, dim: int, batch_sizes, top_ks,
                  hash_params: WtaParams | None = None, repetitions: int = 30,
                  warmup: int = 5, seed: int = 0,
                  weights: np.ndarray | None = None) -> BenchReport:
    """Time exact vs hashed softmax forward passes over a (batch, K) grid.

    Random Gaussian weights and queries unless ``weights`` is given.  The
    index build is timed once and reported as an ``index_build`` row.
    """
    if repetitions < 30:
        raise ConfigError("repetitions must be >= 30 for stable medians")
    params = hash_params if hash_params is not None else WtaParams(
        dim=dim, window_size=16, n_perms=120, n_bands=40, seed=seed)
    if params.dim != dim:
        raise ConfigError("hash_params.dim must equal dim")
    rng = np.random.default_rng(seed)
    W = weights if weights is not None else rng.standard_normal((n_classes, dim))
    model = ParamMatrix(weights=W)
    resolution = timer_resolution_ns()

    report = BenchReport(meta={
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "timer_resolution_ns": resolution,
        "config_hash": config_hash({
            "n_classes": n_classes, "dim": dim,
            "batch_sizes": list(batch_sizes), "top_ks": list(top_ks),
            "repetitions": repetitions, "seed": seed,
            "hash_params": [params.dim, params.window_size, params.n_perms,
                            params.n_bands, params.seed],
        }),
    })

    t0 = time.perf_counter_ns()
    index = LshIndex.build(model.weights, params)
    build_ms = (time.perf_counter_ns() - t0) / 1e6
    report.rows.append(BenchRow(
        kind="index_build", n_classes=n_classes, dim=dim, batch_size=None,
        top_k=None, median_ms=build_ms, iqr_ms=0.0,
        reliable=build_ms * 1e6 >= _MIN_TICKS * resolution))

    exact_medians: dict[int, float] = {}
    for batch in batch_sizes:
        X = rng.standard_normal((batch, dim))
        median, iqr, reliable = _time_fn(
            lambda: exact_softmax_batch(X, model), repetitions, warmup,
            resolution)
        exact_medians[batch] = median
        report.rows.append(BenchRow(
            kind="exact", n_classes=n_classes, dim=dim, batch_size=batch,
            top_k=None, median_ms=median, iqr_ms=iqr, reliable=reliable))

    for batch in batch_sizes:
        X = rng.standard_normal((batch, dim))
        for top_k in top_ks:
            def run():
                for x in X:
                    sparse_softmax_forward(x, model, index, top_k)
            median, iqr, reliable = _time_fn(run, repetitions, warmup,
                                             resolution)
            report.rows.append(BenchRow(
                kind="wta", n_classes=n_classes, dim=dim, batch_size=batch,
                top_k=top_k, median_ms=median, iqr_ms=iqr,
                speedup=exact_medians[batch] / median, reliable=reliable))
    return report


def bench_tradeoff(model: ParamMatrix, index: LshIndex, dataset: Dataset,
                   top_ks, repetitions: int = 30, warmup: int = 3,
                   max_eval: int = 512) -> BenchReport:
    """Accuracy-vs-K and speedup-vs-K curves against the exact baseline.

    The exact model's top-1 accuracy on ``dataset`` is the ceiling;
    each hashed row reports its accuracy as a fraction of that ceiling
    together with its measured per-example speedup.
    """
    if repetitions < 30:
        raise ConfigError("repetitions must be >= 30 for stable medians")
    X = dataset.features[:max_eval].astype(np.float64)
    truths = dataset.labels[:len(X)]
    resolution = timer_resolution_ns()
    report = BenchReport(meta={
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "timer_resolution_ns": resolution,
        "config_hash": config_hash({
            "n_classes": model.n_classes, "dim": model.dim,
            "top_ks": list(top_ks), "examples": int(len(X)),
        }),
    })

    exact_acc = top1_accuracy(rank_exact(model, X, 1), truths)
    xq = X[0]
    exact_med, exact_iqr, exact_rel = _time_fn(
        lambda: exact_softmax_batch(xq[None, :], model), repetitions, warmup,
        resolution)
    report.rows.append(BenchRow(
        kind="exact", n_classes=model.n_classes, dim=model.dim, batch_size=1,
        top_k=None, median_ms=exact_med, iqr_ms=exact_iqr,
        accuracy_fraction=1.0, reliable=exact_rel))
    if exact_acc == 0.0:
        raise ConfigError("baseline accuracy is zero; no ceiling to compare to")

    for top_k in top_ks:
        acc = top1_accuracy(rank_sparse(model, index, X, 1, retrieve_k=top_k),
                            truths)
        median, iqr, reliable = _time_fn(
            lambda: sparse_softmax_forward(xq, model, index, top_k),
            repetitions, warmup, resolution)
        report.rows.append(BenchRow(
            kind="wta", n_classes=model.n_classes, dim=model.dim, batch_size=1,
            top_k=top_k, median_ms=median, iqr_ms=iqr,
            speedup=exact_med / median,
            accuracy_fraction=acc / exact_acc, reliable=reliable))
    return report


def plot_tradeoff(report: BenchReport, path) -> None:
    """Optional accuracy/speedup plot; needs matplotlib installed."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = [r for r in report.rows if r.kind == "wta" and r.top_k is not None]
    rows.sort(key=lambda r: r.top_k)
    ks = [r.top_k for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax1.plot(ks, [r.accuracy_fraction for r in rows], marker="o")
    ax1.set_xscale("log")
    ax1.set_xlabel("retrieved classes K")
    ax1.set_ylabel("fraction of baseline accuracy")
    ax2.plot(ks, [r.speedup for r in rows], marker="o")
    ax2.set_xscale("log")
    ax2.set_xlabel("retrieved classes K")
    ax2.set_ylabel("speedup vs exact")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
