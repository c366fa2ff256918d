"""Versioned binary serialization for models, trees and checkpoints.

All integers are little-endian.  Each artifact starts with a 4-byte
magic and a u32 format version; readers reject unknown versions rather
than guessing.  Writes go through a temp file in the target directory
followed by an atomic rename, so a crashed or failed write never leaves
a partial artifact behind.

Checkpoint layout (magic ``WTCK``): u32 version, u8 layer kind
(0 exact, 1 wta, 2 hs), u64 step, u64 cursor, then three optional
sections (model, index, tree), each a u8 presence flag followed by a
u64 byte length and the payload.
"""

import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .hstree import HsTree, hs_build_tree
from .layers import ParamMatrix
from .lsh import LshIndex

MODEL_MAGIC = b"WTAM"
TREE_MAGIC = b"WTAT"
CHECKPOINT_MAGIC = b"WTCK"
FORMAT_VERSION = 1

KIND_TO_CODE = {"exact": 0, "wta": 1, "hs": 2}
CODE_TO_KIND = {v: k for k, v in KIND_TO_CODE.items()}


def atomic_write_bytes(path, data: bytes) -> None:
    """Write bytes then atomically rename into place."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def model_to_bytes(model: ParamMatrix) -> bytes:
    parts = [MODEL_MAGIC,
             struct.pack("<IIIB", FORMAT_VERSION, model.n_classes, model.dim,
                         1 if model.bias is not None else 0),
             model.weights.astype("<f8").tobytes()]
    if model.bias is not None:
        parts.append(model.bias.astype("<f8").tobytes())
    return b"".join(parts)


def model_from_bytes(data: bytes) -> ParamMatrix:
    if data[:4] != MODEL_MAGIC:
        raise ConfigError("not a model blob (bad magic)")
    version, n, dim, has_bias = struct.unpack_from("<IIIB", data, 4)
    if version != FORMAT_VERSION:
        raise ConfigError(f"unsupported model version {version}")
    off = 4 + struct.calcsize("<IIIB")
    weights = np.frombuffer(data[off:off + 8 * n * dim], dtype="<f8")
    weights = weights.reshape(n, dim).copy()
    off += 8 * n * dim
    bias = None
    if has_bias:
        bias = np.frombuffer(data[off:off + 8 * n], dtype="<f8").copy()
    return ParamMatrix(weights=weights, bias=bias)


def tree_to_bytes(tree: HsTree) -> bytes:
    # Paths are a pure function of n_classes, so only vectors are stored.
    return b"".join([
        TREE_MAGIC,
        struct.pack("<III", FORMAT_VERSION, tree.n_classes, tree.dim),
        tree.vectors.astype("<f8").tobytes(),
    ])


def tree_from_bytes(data: bytes) -> HsTree:
    if data[:4] != TREE_MAGIC:
        raise ConfigError("not a tree blob (bad magic)")
    version, n_classes, dim = struct.unpack_from("<III", data, 4)
    if version != FORMAT_VERSION:
        raise ConfigError(f"unsupported tree version {version}")
    off = 4 + struct.calcsize("<III")
    vectors = np.frombuffer(data[off:off + 8 * (n_classes - 1) * dim], dtype="<f8")
    tree = hs_build_tree(n_classes, dim, seed=0)
    tree.vectors = vectors.reshape(n_classes - 1, dim).copy()
    return tree


@dataclass
class Checkpoint:
    """A training snapshot: parameters plus whatever state the kind needs."""

    kind: str                      # "exact" | "wta" | "hs"
    step: int = 0
    cursor: int = 0
    model: ParamMatrix | None = None
    index: LshIndex | None = None
    tree: HsTree | None = None


def _section(payload: bytes | None) -> bytes:
    if payload is None:
        return struct.pack("<B", 0)
    return struct.pack("<BQ", 1, len(payload)) + payload


def checkpoint_to_bytes(ckpt: Checkpoint) -> bytes:
    if ckpt.kind not in KIND_TO_CODE:
        raise ConfigError(f"unknown checkpoint kind {ckpt.kind!r}")
    return b"".join([
        CHECKPOINT_MAGIC,
        struct.pack("<IBQQ", FORMAT_VERSION, KIND_TO_CODE[ckpt.kind],
                    ckpt.step, ckpt.cursor),
        _section(model_to_bytes(ckpt.model) if ckpt.model is not None else None),
        _section(ckpt.index.to_bytes() if ckpt.index is not None else None),
        _section(tree_to_bytes(ckpt.tree) if ckpt.tree is not None else None),
    ])


def checkpoint_from_bytes(data: bytes) -> Checkpoint:
    if data[:4] != CHECKPOINT_MAGIC:
        raise ConfigError("not a checkpoint (bad magic)")
    version, kind_code, step, cursor = struct.unpack_from("<IBQQ", data, 4)
    if version != FORMAT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {version}")
    if kind_code not in CODE_TO_KIND:
        raise ConfigError(f"unknown checkpoint kind code {kind_code}")
    off = 4 + struct.calcsize("<IBQQ")
    sections = []
    for _ in range(3):
        (present,) = struct.unpack_from("<B", data, off)
        off += 1
        if present:
            (length,) = struct.unpack_from("<Q", data, off)
            off += 8
            sections.append(data[off:off + length])
            off += length
        else:
            sections.append(None)
    model_blob, index_blob, tree_blob = sections
    return Checkpoint(
        kind=CODE_TO_KIND[kind_code], step=step, cursor=cursor,
        model=model_from_bytes(model_blob) if model_blob is not None else None,
        index=LshIndex.from_bytes(index_blob) if index_blob is not None else None,
        tree=tree_from_bytes(tree_blob) if tree_blob is not None else None,
    )


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    atomic_write_bytes(path, checkpoint_to_bytes(ckpt))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return checkpoint_from_bytes(fh.read())
