"""Output layers: exact softmax and hash-retrieved sparse softmax/logistic.

The sparse forward pass queries the banded hash index for the classes
most likely to carry probability mass, adds the example's positive
labels, and evaluates exact dot products (and the softmax/logistic
nonlinearity) over that active set only.  All other classes implicitly
hold probability zero.  The matching backward pass produces gradients
for exactly the active rows, which doubles as hard negative mining: the
only negatives updated are the ones the index thought were close.

Softmax probabilities are normalised with max-subtraction; logistic
probabilities are independent per-class sigmoids with an optional bias.
"""

from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, InputError, NumericError, UsageError
from .lsh import LshIndex

_EMPTY_F64 = np.empty(0, dtype=np.float64)
_EMPTY_I64 = np.empty(0, dtype=np.int64)


@dataclass
class ParamMatrix:
    """Output-layer parameters: one weight row per class, optional bias."""

    weights: np.ndarray            # (n_classes, dim) float64
    bias: np.ndarray | None = None  # (n_classes,) float64, logistic mode only

    def __post_init__(self):
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 2 or self.weights.shape[0] < 1:
            raise DimensionError("weights must be a (n_classes >= 1, dim) matrix")
        if not np.isfinite(self.weights).all():
            raise InputError("weights must be finite")
        if self.bias is not None:
            self.bias = np.ascontiguousarray(self.bias, dtype=np.float64)
            if self.bias.shape != (self.weights.shape[0],):
                raise DimensionError("bias must have one entry per class")
            if not np.isfinite(self.bias).all():
                raise InputError("bias must be finite")

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    @classmethod
    def gaussian_init(cls, n_classes: int, dim: int, seed: int = 0,
                      with_bias: bool = False) -> "ParamMatrix":
        """Zero-mean Gaussian rows with std 1/sqrt(dim) (fan-in scaling)."""
        rng = np.random.default_rng(seed)
        weights = rng.standard_normal((n_classes, dim)) / np.sqrt(dim)
        bias = np.zeros(n_classes) if with_bias else None
        return cls(weights=weights, bias=bias)


@dataclass(frozen=True)
class SparseActivation:
    """Forward-pass result over the active class set.

    ``mode`` is ``"softmax"`` (probs normalised over the active set) or
    ``"logistic"`` (independent per-class sigmoids).
    """

    ids: np.ndarray = field(default_factory=lambda: _EMPTY_I64.copy())
    logits: np.ndarray = field(default_factory=lambda: _EMPTY_F64.copy())
    probs: np.ndarray = field(default_factory=lambda: _EMPTY_F64.copy())
    mode: str = "softmax"

    def __len__(self) -> int:
        return self.ids.shape[0]


@dataclass(frozen=True)
class SparseGradient:
    """Loss gradients restricted to the forward pass's active classes."""

    ids: np.ndarray        # (n_active,) class ids
    rows: np.ndarray       # (n_active, dim) d(loss)/d(weight row)
    x_grad: np.ndarray     # (dim,) d(loss)/d(input)
    bias_grads: np.ndarray | None = None  # (n_active,), logistic mode


def _check_vector(x, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != dim:
        raise DimensionError(f"expected a vector of length {dim}, got shape {x.shape}")
    return x


def _softmax_stable(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    expd = np.exp(shifted)
    return expd / expd.sum()


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def exact_softmax_forward(x, model: ParamMatrix) -> np.ndarray:
    """Dense softmax over all classes: p_j ∝ exp(x . w_j)."""
    x = _check_vector(x, model.dim)
    logits = model.weights @ x
    if not np.isfinite(logits).all():
        raise NumericError("non-finite logits in exact softmax")
    return _softmax_stable(logits)


def exact_softmax_batch(X, model: ParamMatrix) -> np.ndarray:
    """Row-wise exact softmax for a (batch, dim) input block."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.dim:
        raise DimensionError(f"expected (batch, {model.dim}) inputs, got {X.shape}")
    logits = X @ model.weights.T
    if not np.isfinite(logits).all():
        raise NumericError("non-finite logits in exact softmax")
    shifted = logits - logits.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    return expd / expd.sum(axis=1, keepdims=True)


def _active_set(x, model: ParamMatrix, index: LshIndex, top_k: int,
                positives) -> np.ndarray:
    candidates = index.query(x, top_k)
    pos = np.asarray(sorted({int(p) for p in positives}), dtype=np.int64)
    if pos.size and (pos[0] < 0 or pos[-1] >= model.n_classes):
        raise UsageError("positive labels out of range")
    if pos.size == 0:
        return np.sort(candidates.ids)
    return np.union1d(candidates.ids, pos)


def sparse_softmax_forward(x, model: ParamMatrix, index: LshIndex, top_k: int,
                           positives=()) -> SparseActivation:
    """Softmax over the retrieved top-k classes plus the positive labels.

    Probabilities are normalised over the active set alone.  When both
    retrieval and ``positives`` are empty the activation is empty (the
    index counts the retrieval miss); there is no exhaustive fallback.
    """
    x = _check_vector(x, model.dim)
    active = _active_set(x, model, index, top_k, positives)
    if active.size == 0:
        return SparseActivation(mode="softmax")
    logits = model.weights[active] @ x
    if not np.isfinite(logits).all():
        raise NumericError("non-finite logits in sparse softmax")
    return SparseActivation(ids=active, logits=logits,
                            probs=_softmax_stable(logits), mode="softmax")


def sparse_logistic_forward(x, model: ParamMatrix, index: LshIndex, top_k: int,
                            positives=()) -> SparseActivation:
    """Per-class sigmoid of (x . w_j + bias_j) over the active set.

    No normalisation across classes; a missing bias acts as zero.
    """
    x = _check_vector(x, model.dim)
    active = _active_set(x, model, index, top_k, positives)
    if active.size == 0:
        return SparseActivation(mode="logistic")
    logits = model.weights[active] @ x
    if model.bias is not None:
        logits = logits + model.bias[active]
    if not np.isfinite(logits).all():
        raise NumericError("non-finite logits in sparse logistic")
    return SparseActivation(ids=active, logits=logits,
                            probs=_sigmoid(logits), mode="logistic")


def _align_targets(act: SparseActivation, targets: Mapping[int, float]) -> np.ndarray:
    aligned = np.zeros(len(act))
    for cid, weight in targets.items():
        pos = int(np.searchsorted(act.ids, cid))
        if pos >= len(act) or act.ids[pos] != cid:
            raise UsageError(f"target class {cid} is not in the active set")
        aligned[pos] = weight
    return aligned


def sparse_backward(act: SparseActivation, x, targets: Mapping[int, float],
                    model: ParamMatrix) -> SparseGradient:
    """Gradients of the restricted loss at ``act``.

    Cross-entropy in softmax mode, summed per-class Bernoulli log-loss in
    logistic mode; both give d(loss)/d(w_j) = (p_j - t_j) x for active j
    and d(loss)/d(x) = sum_j (p_j - t_j) w_j.  Inactive classes receive no
    gradient by construction.
    """
    x = _check_vector(x, model.dim)
    t = _align_targets(act, targets)
    if len(act) == 0:
        return SparseGradient(ids=act.ids, rows=np.empty((0, model.dim)),
                              x_grad=np.zeros(model.dim))
    scale = act.probs - t
    rows = np.outer(scale, x)
    x_grad = scale @ model.weights[act.ids]
    bias_grads = scale.copy() if act.mode == "logistic" else None
    return SparseGradient(ids=act.ids, rows=rows, x_grad=x_grad,
                          bias_grads=bias_grads)


def sparse_loss(act: SparseActivation, targets: Mapping[int, float]) -> float:
    """Restricted loss at ``act``: cross-entropy or summed Bernoulli log-loss."""
    t = _align_targets(act, targets)
    if len(act) == 0:
        return 0.0
    if act.mode == "softmax":
        z = act.logits - act.logits.max()
        log_probs = z - np.log(np.exp(z).sum())
        return float(-(t * log_probs).sum())
    # -log sigma(z) = softplus(-z); -log(1 - sigma(z)) = softplus(z)
    return float((np.logaddexp(0.0, act.logits) - t * act.logits).sum())
