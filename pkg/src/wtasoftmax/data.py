"""Synthetic datasets and dataset file I/O.

The generator produces a clustered classification problem: class centers
drawn uniformly on the unit sphere, examples scattered around their
center with isotropic Gaussian noise scaled by ``spread``.  Low spread
gives tightly clustered classes, high spread smears them together.

Two file formats:

* binary (``.wtds``): little-endian; header ``WTDS``, u32 version,
  u32 dim, u32 n_classes, u64 count; a (count, dim) float32 feature
  block; then per example u32 n_labels followed by u32 label ids.
* text: first line ``# wtasoftmax-dataset v1 dim=D classes=N``; one
  example per line as comma-joined labels, a tab, then ``dim``
  space-separated feature values printed with %.9g (lossless for
  float32).  Meant for small hand-written fixtures.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InputError

DATASET_MAGIC = b"WTDS"
DATASET_VERSION = 1
_TEXT_HEADER = "# wtasoftmax-dataset v1"


@dataclass
class Dataset:
    """Feature vectors with per-example label sets."""

    features: np.ndarray          # (count, dim) float32
    labels: list[np.ndarray]      # per example, sorted int64 ids
    n_classes: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float32)
        if self.features.ndim != 2:
            raise ConfigError("features must be a (count, dim) matrix")
        if not np.isfinite(self.features).all():
            raise InputError("features must be finite")
        if len(self.labels) != self.features.shape[0]:
            raise ConfigError("one label set per example required")
        self.labels = [np.asarray(sorted(int(v) for v in ls), dtype=np.int64)
                       for ls in self.labels]
        for ls in self.labels:
            if ls.size and (ls[0] < 0 or ls[-1] >= self.n_classes):
                raise ConfigError("label out of range")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def gen_clustered(n_classes: int, dim: int, per_class: int, spread: float,
                  seed: int = 0) -> Dataset:
    """Clustered synthetic dataset, deterministic in ``seed``.

    ``spread`` >= 0 scales the Gaussian noise around each class center;
    zero makes every example identical to its center.
    """
    if n_classes < 1 or dim < 1 or per_class < 1:
        raise ConfigError("n_classes, dim and per_class must all be >= 1")
    if spread < 0:
        raise ConfigError("spread must be >= 0")
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((n_classes, dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    labels = np.repeat(np.arange(n_classes), per_class)
    noise = rng.standard_normal((labels.size, dim)) * spread
    features = centers[labels] + noise
    order = rng.permutation(labels.size)
    return Dataset(
        features=features[order].astype(np.float32),
        labels=[np.array([l], dtype=np.int64) for l in labels[order]],
        n_classes=n_classes,
        meta={"generator": "clustered", "seed": seed, "spread": spread,
              "per_class": per_class, "centers": centers},
    )


def save_dataset(dataset: Dataset, path) -> None:
    """Write the binary format (atomic)."""
    from .serialize import atomic_write_bytes
    parts = [DATASET_MAGIC,
             struct.pack("<IIIQ", DATASET_VERSION, dataset.dim,
                         dataset.n_classes, len(dataset)),
             dataset.features.astype("<f4").tobytes()]
    for ls in dataset.labels:
        parts.append(struct.pack("<I", ls.size))
        parts.append(ls.astype("<u4").tobytes())
    atomic_write_bytes(path, b"".join(parts))


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != DATASET_MAGIC:
        raise ConfigError(f"{path}: not a dataset file (bad magic)")
    version, dim, n_classes, count = struct.unpack("<IIIQ", data[4:24])
    if version != DATASET_VERSION:
        raise ConfigError(f"unsupported dataset version {version}")
    off = 24
    nfeat = count * dim
    features = np.frombuffer(data[off:off + 4 * nfeat], dtype="<f4")
    features = features.reshape(count, dim).copy()
    off += 4 * nfeat
    labels = []
    for _ in range(count):
        (n_labels,) = struct.unpack_from("<I", data, off)
        off += 4
        ls = np.frombuffer(data[off:off + 4 * n_labels], dtype="<u4")
        labels.append(ls.astype(np.int64))
        off += 4 * n_labels
    return Dataset(features=features, labels=labels, n_classes=n_classes)


def save_dataset_text(dataset: Dataset, path) -> None:
    """Write the plain-text format (atomic)."""
    from .serialize import atomic_write_text
    lines = [f"{_TEXT_HEADER} dim={dataset.dim} classes={dataset.n_classes}"]
    for feat, ls in zip(dataset.features, dataset.labels):
        label_col = ",".join(str(int(v)) for v in ls)
        feat_col = " ".join("%.9g" % v for v in feat)
        lines.append(f"{label_col}\t{feat_col}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_dataset_text(path) -> Dataset:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines or not lines[0].startswith(_TEXT_HEADER):
        raise ConfigError(f"{path}: not a text dataset (bad header)")
    fields = dict(tok.split("=", 1) for tok in lines[0].split() if "=" in tok)
    dim, n_classes = int(fields["dim"]), int(fields["classes"])
    features, labels = [], []
    for ln in lines[1:]:
        label_col, _, feat_col = ln.partition("\t")
        labels.append([int(v) for v in label_col.split(",")] if label_col else [])
        row = [float(v) for v in feat_col.split()]
        if len(row) != dim:
            raise ConfigError(f"{path}: expected {dim} features per line")
        features.append(row)
    return Dataset(features=np.array(features, dtype=np.float32),
                   labels=labels, n_classes=n_classes)
