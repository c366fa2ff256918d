"""Evaluation metrics and ranking helpers.

precision@k here is ``|top-k ∩ truth| / min(k, |truth|)`` averaged over
examples, so single-label tasks get the conventional hit rate and the
value stays in [0, 1] for multi-label truth sets.  Examples with empty
truth sets are skipped and counted as a diagnostic.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, UsageError
from .hstree import HsTree, hs_forward
from .layers import ParamMatrix, sparse_softmax_forward
from .lsh import LshIndex


def precision_at_k(ranked, truths, k: int) -> float:
    """Mean precision@k over all examples with a non-empty truth set.

    ``ranked``: per example, class ids in descending score order (may be
    shorter than k).  ``truths``: per example, an iterable of true ids.
    Raises if no example is evaluable.
    """
    if k < 1:
        raise ConfigError("k must be >= 1")
    total = 0.0
    evaluated = 0
    for pred, truth in zip(ranked, truths, strict=True):
        truth = set(int(t) for t in truth)
        if not truth:
            continue
        top = [int(p) for p in pred[:k]]
        total += len(truth.intersection(top)) / min(k, len(truth))
        evaluated += 1
    if evaluated == 0:
        raise UsageError("no examples with non-empty truth sets")
    return total / evaluated


def precision_report(ranked, truths, ks) -> dict:
    """precision@k over a grid plus diagnostics (skipped count, mean)."""
    skipped = sum(1 for t in truths if len(t) == 0)
    report = {f"precision@{k}": precision_at_k(ranked, truths, k) for k in ks}
    report["average_precision"] = float(np.mean(list(report.values())))
    report["skipped_empty_truth"] = skipped
    return report


def top1_accuracy(ranked, truths) -> float:
    return precision_at_k(ranked, truths, 1)


@dataclass(frozen=True)
class ClassVariances:
    """Per-class spread: mean squared distance to the class centroid."""

    class_ids: np.ndarray    # classes with >= 2 examples, ascending
    variances: np.ndarray    # matching mean squared distances
    skipped_classes: int     # classes with < 2 examples
    hist_counts: np.ndarray
    hist_edges: np.ndarray


def in_class_variance(features, labels, bins: int = 20) -> ClassVariances:
    """Per-class in-class variance and its histogram.

    ``labels`` is a per-example iterable of class ids (an example with
    multiple labels contributes to each of its classes).  Classes with
    fewer than two examples are skipped and counted.
    """
    features = np.asarray(features, dtype=np.float64)
    members: dict[int, list[int]] = {}
    for i, ls in enumerate(labels):
        for cid in ls:
            members.setdefault(int(cid), []).append(i)
    class_ids, variances = [], []
    skipped = 0
    for cid in sorted(members):
        rows = features[members[cid]]
        if rows.shape[0] < 2:
            skipped += 1
            continue
        centroid = rows.mean(axis=0)
        variances.append(float(((rows - centroid) ** 2).sum(axis=1).mean()))
        class_ids.append(cid)
    variances = np.asarray(variances)
    if variances.size:
        hist_counts, hist_edges = np.histogram(variances, bins=bins)
    else:
        hist_counts, hist_edges = np.zeros(bins, dtype=np.int64), np.linspace(0, 1, bins + 1)
    return ClassVariances(class_ids=np.asarray(class_ids, dtype=np.int64),
                          variances=variances, skipped_classes=skipped,
                          hist_counts=hist_counts, hist_edges=hist_edges)


def _rank_dense(scores: np.ndarray, k: int) -> np.ndarray:
    order = np.argsort(-scores, kind="stable")  # ties toward lower id
    return order[:k]


def rank_exact(model: ParamMatrix, X, k: int) -> list[np.ndarray]:
    """Top-k ids per row by dense dot-product score."""
    X = np.asarray(X, dtype=np.float64)
    logits = X @ model.weights.T
    return [_rank_dense(row, k) for row in logits]


def rank_sparse(model: ParamMatrix, index: LshIndex, X, k: int,
                retrieve_k: int | None = None) -> list[np.ndarray]:
    """Top-k ids per row using hash retrieval; lists may be short."""
    retrieve_k = retrieve_k if retrieve_k is not None else k
    out = []
    for x in np.asarray(X, dtype=np.float64):
        act = sparse_softmax_forward(x, model, index, retrieve_k)
        if len(act) == 0:
            out.append(np.empty(0, dtype=np.int64))
            continue
        order = np.argsort(-act.logits, kind="stable")[:k]
        out.append(act.ids[order])
    return out


def rank_hs(tree: HsTree, X, k: int) -> list[np.ndarray]:
    """Top-k ids per row by hierarchical leaf probability."""
    out = []
    for x in np.asarray(X, dtype=np.float64):
        out.append(_rank_dense(hs_forward(x, tree), k))
    return out
