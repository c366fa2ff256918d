"""Hierarchical softmax over a balanced binary tree.

Classes sit at the leaves of a complete binary tree (heap layout: node
``i`` has children ``2i+1`` and ``2i+2``; the last ``n_classes`` heap
slots are the leaves, in class-id order).  Every internal node carries a
parameter vector; the probability of a class is the product of sigmoid
branch decisions along its root-to-leaf path, so a forward or backward
pass touches only ~log2(n_classes) vectors.  Taking the left branch at
node ``v`` contributes sigma(x . v), the right branch sigma(-x . v);
since the two always sum to one, leaf probabilities sum to one exactly.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, NumericError, UsageError


def _log_sigmoid(z: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -z)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class HsTree:
    """Complete binary tree with one parameter vector per internal node."""

    n_classes: int
    vectors: np.ndarray      # (n_classes - 1, dim)
    path_nodes: np.ndarray   # (n_classes, max_depth) int32, -1 padded
    path_signs: np.ndarray   # (n_classes, max_depth) float64, 0 padded
    path_lens: np.ndarray    # (n_classes,) int32

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def max_depth(self) -> int:
        return self.path_nodes.shape[1]

    def path(self, class_id: int) -> tuple[np.ndarray, np.ndarray]:
        """(node ids, branch signs) from the root to this class's leaf."""
        depth = int(self.path_lens[class_id])
        return (self.path_nodes[class_id, :depth],
                self.path_signs[class_id, :depth])


def hs_build_tree(n_classes: int, dim: int, seed: int = 0) -> HsTree:
    """Build the tree for ``n_classes`` leaves with Gaussian node vectors.

    Node vectors use the same fan-in init as the flat layers: zero-mean,
    std 1/sqrt(dim).  Depth is at most ceil(log2(n_classes)) + 1.
    """
    if n_classes < 2:
        raise ConfigError("hierarchical softmax needs at least 2 classes")
    if dim < 1:
        raise ConfigError("dim must be >= 1")
    rng = np.random.default_rng(seed)
    vectors = rng.standard_normal((n_classes - 1, dim)) / np.sqrt(dim)

    n_internal = n_classes - 1
    paths: list[tuple[list[int], list[float]]] = []
    for cls in range(n_classes):
        heap_idx = n_internal + cls
        nodes: list[int] = []
        signs: list[float] = []
        while heap_idx > 0:
            parent = (heap_idx - 1) // 2
            nodes.append(parent)
            signs.append(1.0 if heap_idx == 2 * parent + 1 else -1.0)
            heap_idx = parent
        paths.append((nodes[::-1], signs[::-1]))

    max_depth = max(len(nodes) for nodes, _ in paths)
    path_nodes = np.full((n_classes, max_depth), -1, dtype=np.int32)
    path_signs = np.zeros((n_classes, max_depth))
    path_lens = np.empty(n_classes, dtype=np.int32)
    for cls, (nodes, signs) in enumerate(paths):
        path_lens[cls] = len(nodes)
        path_nodes[cls, :len(nodes)] = nodes
        path_signs[cls, :len(signs)] = signs
    return HsTree(n_classes=n_classes, vectors=vectors, path_nodes=path_nodes,
                  path_signs=path_signs, path_lens=path_lens)


def hs_forward(x, tree: HsTree, class_ids=None) -> np.ndarray:
    """Class probabilities under the tree.

    With ``class_ids=None`` returns all ``n_classes`` leaf probabilities
    (cost ~n_classes dot products); otherwise only the requested classes
    (cost ~depth dot products each).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != tree.dim:
        raise DimensionError(f"expected a vector of length {tree.dim}")
    if class_ids is None:
        nodes = tree.path_nodes
        signs = tree.path_signs
    else:
        class_ids = np.asarray(class_ids, dtype=np.int64)
        if class_ids.size and (class_ids.min() < 0
                               or class_ids.max() >= tree.n_classes):
            raise UsageError("class id out of range")
        nodes = tree.path_nodes[class_ids]
        signs = tree.path_signs[class_ids]
    z = tree.vectors @ x  # (n_internal,)
    if not np.isfinite(z).all():
        raise NumericError("non-finite branch logits")
    branch = signs * z[nodes]          # padded entries have sign 0
    logp = np.where(signs != 0.0, _log_sigmoid(branch), 0.0).sum(axis=1)
    return np.exp(logp)


def hs_loss_backward(x, tree: HsTree, label: int):
    """Negative log-likelihood of ``label`` and its gradients.

    Returns ``(loss, node_ids, node_grads, x_grad)``; gradients touch only
    the path's internal nodes.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != tree.dim:
        raise DimensionError(f"expected a vector of length {tree.dim}")
    label = int(label)
    if label < 0 or label >= tree.n_classes:
        raise UsageError(f"label {label} out of range [0, {tree.n_classes})")
    nodes, signs = tree.path(label)
    z = tree.vectors[nodes] @ x
    branch = signs * z
    if not np.isfinite(branch).all():
        raise NumericError("non-finite branch logits")
    loss = float(np.logaddexp(0.0, -branch).sum())  # sum of -log sigma
    coef = (_sigmoid(branch) - 1.0) * signs          # d(loss)/d(z_node)
    node_grads = np.outer(coef, x)
    x_grad = coef @ tree.vectors[nodes]
    return loss, nodes.astype(np.int64), node_grads, x_grad
