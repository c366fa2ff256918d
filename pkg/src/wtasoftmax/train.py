"""Single-process SGD with momentum for the three output layers.

The hashed-softmax trainer applies classical momentum updates only to
the rows its forward passes touched (retrieved candidates plus positive
labels), then refreshes the hash entries of (a) every touched class and
(b) the next ``rehash_batch`` classes of a round-robin cursor, so every
index entry lags its live weights by at most ceil(n_classes /
rehash_batch) steps.  Velocity rows materialise lazily; untouched rows
keep their velocity untouched, which preserves strict update sparsity.

The exact and hierarchical trainers are dense baselines sharing the
same schedule and metrics so wall-clock comparisons are apples to
apples.  All trainers are deterministic given their seed when run
single-threaded.
"""

import csv
import io
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import ConfigError, NumericError, UsageError
from .hstree import HsTree, hs_build_tree, hs_loss_backward
from .layers import (
    ParamMatrix,
    sparse_backward,
    sparse_logistic_forward,
    sparse_loss,
    sparse_softmax_forward,
)
from .lsh import LshIndex
from .serialize import Checkpoint, atomic_write_text

TRAIN_LOG_COLUMNS = ("step", "loss", "lr", "miss_rate", "mean_active_size")


@dataclass(frozen=True)
class TrainConfig:
    """SGD hyperparameters.

    ``rehash_batch=None`` resolves to ceil(n_classes / 1000) at trainer
    construction, so a full round-robin sweep takes about a thousand steps.
    """

    lr: float = 0.001
    lr_decay: float = 1.0
    decay_interval: int = 1000
    momentum: float = 0.9
    batch_size: int = 1
    top_k: int = 50
    rehash_batch: int | None = None
    steps: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ConfigError("lr_decay must be in (0, 1]")
        if self.decay_interval < 1:
            raise ConfigError("decay_interval must be >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must be in [0, 1)")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.top_k < 1:
            raise ConfigError("top_k must be >= 1")
        if self.rehash_batch is not None and self.rehash_batch < 0:
            raise ConfigError("rehash_batch must be >= 0")
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")


def lr_schedule(step: int, config: TrainConfig) -> float:
    """Stepwise exponential decay: lr * decay ** (step // interval)."""
    if step < 0:
        raise ConfigError("step must be >= 0")
    return config.lr * config.lr_decay ** (step // config.decay_interval)


@dataclass(frozen=True)
class StepMetrics:
    step: int
    loss: float
    lr: float
    miss_rate: float
    mean_active_size: float


class _LazyVelocity:
    """Momentum velocities materialised per row on first touch."""

    def __init__(self, dim: int):
        self.dim = dim
        self.rows: dict[int, np.ndarray] = {}

    def apply(self, row_id: int, grad: np.ndarray, lr: float,
              momentum: float) -> np.ndarray:
        v = self.rows.get(row_id)
        if v is None:
            v = np.zeros(self.dim)
        v = momentum * v - lr * grad
        self.rows[row_id] = v
        return v


def _check_batch(X, labels, dim: int, n_classes: int):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != dim:
        raise ConfigError(f"expected a (batch, {dim}) input block, got {X.shape}")
    if len(labels) != X.shape[0]:
        raise ConfigError("one label set per example required")
    for ls in labels:
        for lab in ls:
            if not 0 <= int(lab) < n_classes:
                raise UsageError(f"label {lab} out of range [0, {n_classes})")
    return X


class WtaSoftmaxTrainer:
    """Sparse top-K trainer over a hashed softmax or logistic layer."""

    kind = "wta"

    def __init__(self, model: ParamMatrix, index: LshIndex, config: TrainConfig,
                 mode: str = "softmax"):
        if mode not in ("softmax", "logistic"):
            raise ConfigError(f"unknown mode {mode!r}")
        if len(index) != model.n_classes:
            raise ConfigError("index must cover exactly the model's classes")
        self.model = model
        self.index = index
        self.config = config
        self.mode = mode
        self.cursor = 0
        self.step = 0
        self._velocity = _LazyVelocity(model.dim)
        self._bias_velocity: dict[int, float] = {}
        self.rehash_batch = (config.rehash_batch
                             if config.rehash_batch is not None
                             else -(-model.n_classes // 1000))

    def _forward(self, x, positives):
        if self.mode == "softmax":
            return sparse_softmax_forward(x, self.model, self.index,
                                          self.config.top_k, positives)
        return sparse_logistic_forward(x, self.model, self.index,
                                       self.config.top_k, positives)

    def _targets(self, labels) -> dict[int, float]:
        if self.mode == "softmax":
            return {int(l): 1.0 / len(labels) for l in labels}
        return {int(l): 1.0 for l in labels}

    def train_step(self, X, labels) -> StepMetrics:
        """One batch: sparse forward/backward, momentum update, rehash."""
        cfg = self.config
        n = self.model.n_classes
        X = _check_batch(X, labels, self.model.dim, n)
        batch = X.shape[0]
        misses_before = self.index.miss_count
        grad_acc: dict[int, np.ndarray] = {}
        bias_acc: dict[int, float] = {}
        total_loss = 0.0
        active_total = 0
        for x, ls in zip(X, labels):
            act = self._forward(x, ls)
            if len(act) == 0:
                continue
            targets = self._targets(ls)
            total_loss += sparse_loss(act, targets)
            grad = sparse_backward(act, x, targets, self.model)
            for j, cid in enumerate(grad.ids.tolist()):
                acc = grad_acc.get(cid)
                if acc is None:
                    grad_acc[cid] = grad.rows[j].copy()
                else:
                    acc += grad.rows[j]
                if grad.bias_grads is not None:
                    bias_acc[cid] = bias_acc.get(cid, 0.0) + grad.bias_grads[j]
            active_total += len(act)

        lr = lr_schedule(self.step, cfg)
        touched = sorted(grad_acc)
        for cid in touched:
            delta = self._velocity.apply(cid, grad_acc[cid] / batch, lr,
                                         cfg.momentum)
            self.model.weights[cid] += delta
            if not np.isfinite(self.model.weights[cid]).all():
                raise NumericError(
                    f"weights for class {cid} overflowed at step {self.step}")
            if cid in bias_acc and self.model.bias is not None:
                bv = cfg.momentum * self._bias_velocity.get(cid, 0.0) \
                    - lr * bias_acc[cid] / batch
                self._bias_velocity[cid] = bv
                self.model.bias[cid] += bv

        rehash = list(touched)
        seen = set(touched)
        for i in range(self.rehash_batch):
            cid = (self.cursor + i) % n
            if cid not in seen:
                rehash.append(cid)
                seen.add(cid)
        for cid in rehash:
            self.index.update(cid, self.model.weights[cid])
        self.cursor = (self.cursor + self.rehash_batch) % n

        metrics = StepMetrics(
            step=self.step,
            loss=total_loss / batch,
            lr=lr,
            miss_rate=(self.index.miss_count - misses_before) / batch,
            mean_active_size=active_total / batch,
        )
        self.step += 1
        return metrics

    def predict_topk(self, X, k: int) -> list[np.ndarray]:
        from .metrics import rank_sparse
        return rank_sparse(self.model, self.index, X, k,
                           retrieve_k=max(k, self.config.top_k))

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(kind=self.kind, step=self.step, cursor=self.cursor,
                          model=self.model, index=self.index)


class ExactSoftmaxTrainer:
    """Dense softmax baseline; every row updates every step."""

    kind = "exact"

    def __init__(self, model: ParamMatrix, config: TrainConfig):
        self.model = model
        self.config = config
        self.step = 0
        self.cursor = 0
        self._velocity = np.zeros_like(model.weights)

    def train_step(self, X, labels) -> StepMetrics:
        cfg = self.config
        n = self.model.n_classes
        X = _check_batch(X, labels, self.model.dim, n)
        batch = X.shape[0]
        logits = X @ self.model.weights.T
        if not np.isfinite(logits).all():
            raise NumericError(f"non-finite logits at step {self.step}")
        z = logits - logits.max(axis=1, keepdims=True)
        expd = np.exp(z)
        denom = expd.sum(axis=1, keepdims=True)
        probs = expd / denom
        log_probs = z - np.log(denom)
        targets = np.zeros_like(probs)
        for i, ls in enumerate(labels):
            for lab in ls:
                targets[i, int(lab)] = 1.0 / len(ls)
        loss = float(-(targets * log_probs).sum())
        grad = (probs - targets).T @ X / batch
        lr = lr_schedule(self.step, cfg)
        self._velocity = cfg.momentum * self._velocity - lr * grad
        self.model.weights += self._velocity
        if not np.isfinite(self.model.weights).all():
            raise NumericError(f"weights overflowed at step {self.step}")
        metrics = StepMetrics(step=self.step, loss=loss / batch, lr=lr,
                              miss_rate=0.0, mean_active_size=float(n))
        self.step += 1
        return metrics

    def predict_topk(self, X, k: int) -> list[np.ndarray]:
        from .metrics import rank_exact
        return rank_exact(self.model, X, k)

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(kind=self.kind, step=self.step, model=self.model)


class HsTrainer:
    """Hierarchical softmax baseline; updates only path nodes per label."""

    kind = "hs"

    def __init__(self, tree: HsTree, config: TrainConfig):
        self.tree = tree
        self.config = config
        self.step = 0
        self.cursor = 0
        self._velocity = _LazyVelocity(tree.dim)

    def train_step(self, X, labels) -> StepMetrics:
        cfg = self.config
        X = _check_batch(X, labels, self.tree.dim, self.tree.n_classes)
        batch = X.shape[0]
        grad_acc: dict[int, np.ndarray] = {}
        total_loss = 0.0
        touched_total = 0
        for x, ls in zip(X, labels):
            for lab in ls:
                loss, node_ids, node_grads, _ = hs_loss_backward(x, self.tree, lab)
                total_loss += loss / len(ls)
                for j, nid in enumerate(node_ids.tolist()):
                    acc = grad_acc.get(nid)
                    if acc is None:
                        grad_acc[nid] = node_grads[j] * (1.0 / len(ls))
                    else:
                        acc += node_grads[j] / len(ls)
                touched_total += node_ids.size
        lr = lr_schedule(self.step, cfg)
        for nid in sorted(grad_acc):
            delta = self._velocity.apply(nid, grad_acc[nid] / batch, lr,
                                         cfg.momentum)
            self.tree.vectors[nid] += delta
            if not np.isfinite(self.tree.vectors[nid]).all():
                raise NumericError(f"node {nid} overflowed at step {self.step}")
        metrics = StepMetrics(step=self.step, loss=total_loss / batch, lr=lr,
                              miss_rate=0.0,
                              mean_active_size=touched_total / batch)
        self.step += 1
        return metrics

    def predict_topk(self, X, k: int) -> list[np.ndarray]:
        from .metrics import rank_hs
        return rank_hs(self.tree, X, k)

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(kind=self.kind, step=self.step, tree=self.tree)


def make_trainer(kind: str, config: TrainConfig, n_classes: int, dim: int,
                 hash_params=None, mode: str = "softmax"):
    """Build a fresh, seeded trainer of the requested kind."""
    if kind == "wta":
        if hash_params is None:
            raise ConfigError("wta trainer needs hash parameters")
        model = ParamMatrix.gaussian_init(n_classes, dim, seed=config.seed,
                                          with_bias=(mode == "logistic"))
        index = LshIndex.build(model.weights, hash_params)
        return WtaSoftmaxTrainer(model, index, config, mode=mode)
    if kind == "exact":
        model = ParamMatrix.gaussian_init(n_classes, dim, seed=config.seed)
        return ExactSoftmaxTrainer(model, config)
    if kind == "hs":
        tree = hs_build_tree(n_classes, dim, seed=config.seed)
        return HsTrainer(tree, config)
    raise ConfigError(f"unknown trainer kind {kind!r}")


def iterate_batches(dataset: Dataset, config: TrainConfig):
    """Endless deterministic batch stream: reshuffle every epoch by seed."""
    rng = np.random.default_rng(config.seed)
    n = len(dataset)
    if n == 0:
        raise ConfigError("dataset is empty")
    while True:
        order = rng.permutation(n)
        for lo in range(0, n, config.batch_size):
            sel = order[lo:lo + config.batch_size]
            yield dataset.features[sel].astype(np.float64), \
                [dataset.labels[i] for i in sel]


def run_training(trainer, dataset: Dataset, steps: int | None = None,
                 time_budget_s: float | None = None) -> list[StepMetrics]:
    """Drive a trainer over a dataset; stop on steps and/or wall clock."""
    import time
    cfg = trainer.config
    steps = cfg.steps if steps is None else steps
    history: list[StepMetrics] = []
    deadline = None if time_budget_s is None else time.monotonic() + time_budget_s
    for X, labels in iterate_batches(dataset, cfg):
        if len(history) >= steps:
            break
        if deadline is not None and time.monotonic() >= deadline:
            break
        history.append(trainer.train_step(X, labels))
    return history


def format_train_log(history) -> str:
    """CSV training log; floats use repr so identical runs match bytewise."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRAIN_LOG_COLUMNS)
    for m in history:
        writer.writerow([m.step, repr(m.loss), repr(m.lr), repr(m.miss_rate),
                         repr(m.mean_active_size)])
    return buf.getvalue()


def write_train_log(history, path) -> None:
    atomic_write_text(path, format_train_log(history))
