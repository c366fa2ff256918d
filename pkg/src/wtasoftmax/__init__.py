"""Approximate large-vocabulary softmax via winner-take-all hashing.

Hash every class's weight vector into banded ordinal codes once, then
answer each forward pass by retrieving only the handful of classes whose
codes collide with the input's, computing exact dot products for just
those.  Training updates the same retrieved rows (hard negatives) plus
the true labels, and refreshes hash entries round-robin so the index
tracks the moving weights.

Exact softmax and hierarchical softmax baselines, a synthetic data
generator, evaluation metrics and a timing harness round out the
package; see the demos/ scripts and the ``wtasoftmax`` CLI.
"""

from .bench import BenchReport, BenchRow, bench_forward, bench_tradeoff
from .data import (
    Dataset,
    gen_clustered,
    load_dataset,
    load_dataset_text,
    save_dataset,
    save_dataset_text,
)
from .errors import (
    ConfigError,
    DimensionError,
    InputError,
    NumericError,
    UsageError,
    WtaSoftmaxError,
)
from .hstree import HsTree, hs_build_tree, hs_forward, hs_loss_backward
from .layers import (
    ParamMatrix,
    SparseActivation,
    SparseGradient,
    exact_softmax_batch,
    exact_softmax_forward,
    sparse_backward,
    sparse_logistic_forward,
    sparse_loss,
    sparse_softmax_forward,
)
from .lsh import CandidateSet, IndexStats, LshIndex
from .metrics import (
    ClassVariances,
    in_class_variance,
    precision_at_k,
    precision_report,
    rank_exact,
    rank_hs,
    rank_sparse,
    top1_accuracy,
)
from .serialize import Checkpoint, load_checkpoint, save_checkpoint
from .train import (
    ExactSoftmaxTrainer,
    HsTrainer,
    StepMetrics,
    TrainConfig,
    WtaSoftmaxTrainer,
    lr_schedule,
    make_trainer,
    run_training,
)
from .wta import (
    PermutationSet,
    WtaCode,
    WtaParams,
    band_keys,
    band_keys_many,
    gen_permutations,
    wta_hash,
    wta_hash_many,
)

__version__ = "0.1.0"

__all__ = [
    "BenchReport", "BenchRow", "bench_forward", "bench_tradeoff",
    "Dataset", "gen_clustered", "load_dataset", "load_dataset_text",
    "save_dataset", "save_dataset_text",
    "ConfigError", "DimensionError", "InputError", "NumericError",
    "UsageError", "WtaSoftmaxError",
    "HsTree", "hs_build_tree", "hs_forward", "hs_loss_backward",
    "ParamMatrix", "SparseActivation", "SparseGradient",
    "exact_softmax_batch", "exact_softmax_forward", "sparse_backward",
    "sparse_logistic_forward", "sparse_loss", "sparse_softmax_forward",
    "CandidateSet", "IndexStats", "LshIndex",
    "ClassVariances", "in_class_variance", "precision_at_k",
    "precision_report", "rank_exact", "rank_hs", "rank_sparse",
    "top1_accuracy",
    "Checkpoint", "load_checkpoint", "save_checkpoint",
    "ExactSoftmaxTrainer", "HsTrainer", "StepMetrics", "TrainConfig",
    "WtaSoftmaxTrainer", "lr_schedule", "make_trainer", "run_training",
    "PermutationSet", "WtaCode", "WtaParams", "band_keys", "band_keys_many",
    "gen_permutations", "wta_hash", "wta_hash_many",
]
