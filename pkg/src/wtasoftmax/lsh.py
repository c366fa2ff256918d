"""Banded hash tables over class parameter vectors.

Every indexed class stores one entry per band table, keyed by the band
keys of its hashed parameter vector.  A query hashes the input, looks up
its own band keys in all tables, and counts how many bands each stored
class matched; the classes with the highest counts are the approximate
nearest neighbours by dot product.

Storage is a compact sorted (key, ids) layout built in bulk by
:meth:`LshIndex.build`, plus a per-bucket overlay dict that absorbs
inserts, updates and removals.  A bucket present in the overlay shadows
the bulk copy entirely, so readers always see a consistent bucket.
Buckets keep ids ascending, which makes index comparison and
serialization canonical.

Concurrency contract: any number of readers may call :meth:`query`
concurrently, but mutations (insert/update/remove) require exclusive
access.
"""

import io
import struct
from dataclasses import dataclass, field
from itertools import zip_longest

import numpy as np

from .errors import ConfigError, DimensionError, UsageError
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

INDEX_MAGIC = b"WTAI"
INDEX_VERSION = 1

_EMPTY_IDS = np.empty(0, dtype=np.int32)


@dataclass(frozen=True)
class CandidateSet:
    """Query result: class ids with their band-match counts.

    Ordered by descending count, ascending id among equal counts.  Counts
    are exact matches against each class's stored code, in ``[1, n_bands]``.
    """

    ids: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    counts: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    def __len__(self) -> int:
        return self.ids.shape[0]

    def entries(self) -> list[tuple[int, int]]:
        return [(int(i), int(c)) for i, c in zip(self.ids, self.counts)]


@dataclass(frozen=True)
class IndexStats:
    n_classes: int
    n_tables: int
    n_buckets: int
    max_bucket: int
    mean_bucket: float
    empty_band_fraction: float
    bucket_size_hist: np.ndarray  # hist[s] = number of buckets holding s ids
    query_count: int
    miss_count: int


@dataclass(frozen=True)
class _CsrTables:
    """Bulk storage: globally sorted combined keys with bucket offsets."""

    keys: np.ndarray     # sorted unique int64 combined keys
    offsets: np.ndarray  # int64, len(keys) + 1
    ids: np.ndarray      # int32, ascending within each bucket


class LshIndex:
    """Banded WTA hash index supporting insert/update/remove and top-K query."""

    def __init__(self, params: WtaParams, perms: PermutationSet | None = None):
        self.params = params
        self.perms = perms if perms is not None else gen_permutations(params)
        if self.perms.dim != params.dim or self.perms.window_size != params.window_size:
            raise ConfigError("permutation set does not match params")
        # Combined key = table_index * key_space + band_key.  The fast int64
        # path needs every combined key to fit 63 bits.
        self._narrow = params.band_bits <= 62 and (
            params.n_bands * params.key_space <= 1 << 62
        )
        self._base: _CsrTables | None = None
        self._overlay: dict[int, np.ndarray] = {}
        self._stored: dict[int, object] = {}  # class id -> combined key vector
        self.query_count = 0
        self.miss_count = 0

    # -- construction -------------------------------------------------

    @classmethod
    def build(cls, weights, params: WtaParams,
              perms: PermutationSet | None = None) -> "LshIndex":
        """Index rows 0..N-1 of ``weights`` in one bulk pass.

        Equivalent to inserting every row individually.
        """
        W = np.asarray(weights, dtype=np.float64)
        if W.ndim != 2 or W.shape[1] != params.dim:
            raise DimensionError(f"expected (n, {params.dim}) weights, got {W.shape}")
        idx = cls(params, perms)
        n = W.shape[0]
        if n == 0:
            return idx
        if not idx._narrow:
            for i in range(n):
                idx.insert(i, W[i])
            return idx
        codes = wta_hash_many(W, idx.perms)
        combined = band_keys_many(codes, params) + idx._band_offsets()[None, :]
        idx._install_bulk(np.arange(n, dtype=np.int64), combined)
        return idx

    def _install_bulk(self, class_ids: np.ndarray, combined: np.ndarray) -> None:
        """Set bulk storage from per-class combined key rows (narrow mode)."""
        n, m = combined.shape
        flat = combined.ravel()
        rows = np.repeat(class_ids.astype(np.int32), m)
        order = np.lexsort((rows, flat))
        flat_sorted = flat[order]
        keys, starts = np.unique(flat_sorted, return_index=True)
        offsets = np.append(starts, flat_sorted.size).astype(np.int64)
        self._base = _CsrTables(keys=keys, offsets=offsets, ids=rows[order])
        self._overlay = {}
        self._stored = {int(cid): combined[i] for i, cid in enumerate(class_ids)}

    def _band_offsets(self) -> np.ndarray:
        return np.arange(self.params.n_bands, dtype=np.int64) * self.params.key_space

    def _combined_keys(self, w) -> object:
        """Hash a vector into its per-table combined keys."""
        keys = band_keys(wta_hash(w, self.perms), self.params)
        if self._narrow:
            return keys.astype(np.int64) + self._band_offsets()
        space = self.params.key_space
        return tuple(m * space + int(k) for m, k in enumerate(keys))

    # -- bucket access -------------------------------------------------

    def _base_bucket(self, comb: int) -> np.ndarray:
        base = self._base
        if base is None:
            return _EMPTY_IDS
        pos = int(np.searchsorted(base.keys, comb))
        if pos < base.keys.shape[0] and base.keys[pos] == comb:
            return base.ids[base.offsets[pos]:base.offsets[pos + 1]]
        return _EMPTY_IDS

    def _bucket(self, comb: int) -> np.ndarray:
        hit = self._overlay.get(comb)
        if hit is not None:
            return hit
        return self._base_bucket(comb)

    # -- mutation -------------------------------------------------------

    def insert(self, class_id: int, w) -> None:
        """Add a new class; its id must not already be indexed."""
        class_id = int(class_id)
        if class_id < 0:
            raise UsageError("class ids must be non-negative")
        if class_id in self._stored:
            raise UsageError(f"class {class_id} already indexed; use update()")
        combs = self._combined_keys(w)
        for comb in combs:
            comb = int(comb)
            bucket = self._bucket(comb)
            pos = int(np.searchsorted(bucket, class_id))
            self._overlay[comb] = np.insert(bucket, pos, class_id)
        self._stored[class_id] = combs

    def remove(self, class_id: int) -> None:
        """Drop a class from every table."""
        class_id = int(class_id)
        combs = self._stored.pop(class_id, None)
        if combs is None:
            raise UsageError(f"class {class_id} is not indexed")
        for comb in combs:
            comb = int(comb)
            bucket = self._bucket(comb)
            pos = int(np.searchsorted(bucket, class_id))
            self._overlay[comb] = np.delete(bucket, pos)

    def update(self, class_id: int, w_new) -> None:
        """Re-index a class after its parameter vector changed."""
        self.remove(class_id)
        self.insert(class_id, w_new)

    # -- query ----------------------------------------------------------

    def query(self, x, top_k: int) -> CandidateSet:
        """Top ``top_k`` classes by band-match count against ``x``.

        Ties in count break toward the smaller class id.  Classes matching
        zero bands never appear; fewer than ``top_k`` entries may return.
        An empty result increments :attr:`miss_count`.
        """
        if top_k < 1:
            raise ConfigError("top_k must be >= 1")
        code = wta_hash(x, self.perms)
        self.query_count += 1
        parts = self._gather(code)
        if not parts:
            self.miss_count += 1
            return CandidateSet()
        cand = parts[0] if len(parts) == 1 else np.concatenate(parts)
        if cand.size == 0:
            self.miss_count += 1
            return CandidateSet()
        counts = np.bincount(cand)
        nz = np.nonzero(counts)[0]
        cnt = counts[nz].astype(np.int64)
        # Single sortable surrogate: higher count first, then lower id.
        bound = int(nz[-1]) + 1
        surrogate = cnt * bound - nz
        if nz.size > top_k:
            sel = np.argpartition(-surrogate, top_k - 1)[:top_k]
            sel = sel[np.argsort(-surrogate[sel])]
        else:
            sel = np.argsort(-surrogate)
        return CandidateSet(ids=nz[sel].astype(np.int64), counts=cnt[sel])

    def _gather(self, code: WtaCode) -> list[np.ndarray]:
        """Collect the buckets addressed by a query code."""
        keys = band_keys(code, self.params)
        if not self._narrow:
            space = self.params.key_space
            out = []
            for m, k in enumerate(keys):
                bucket = self._bucket(m * space + int(k))
                if bucket.size:
                    out.append(bucket)
            return out
        combined = keys.astype(np.int64) + self._band_offsets()
        parts: list[np.ndarray] = []
        if self._overlay:
            shadowed = np.fromiter(
                (c in self._overlay for c in combined.tolist()),
                dtype=bool, count=combined.size,
            )
            for c in combined[shadowed].tolist():
                bucket = self._overlay[c]
                if bucket.size:
                    parts.append(bucket)
            combined = combined[~shadowed]
        base = self._base
        if base is not None and combined.size:
            pos = np.searchsorted(base.keys, combined)
            pos = np.minimum(pos, base.keys.shape[0] - 1)
            valid = pos[base.keys[pos] == combined]
            starts = base.offsets[valid]
            lengths = base.offsets[valid + 1] - starts
            total = int(lengths.sum())
            if total:
                # Ragged gather: expand [start, start+len) runs in one shot.
                before = np.cumsum(lengths) - lengths
                take = np.repeat(starts - before, lengths) + np.arange(total)
                parts.append(base.ids[take])
        return parts

    # -- introspection ----------------------------------------------------

    def __len__(self) -> int:
        return len(self._stored)

    def __contains__(self, class_id: int) -> bool:
        return int(class_id) in self._stored

    def _effective_buckets(self):
        """Yield (combined_key, ids) for every non-empty bucket, sorted by key."""
        base = self._base
        overlay_keys = sorted(self._overlay)
        oi = 0
        if base is not None:
            for pos in range(base.keys.shape[0]):
                key = int(base.keys[pos])
                while oi < len(overlay_keys) and overlay_keys[oi] < key:
                    ids = self._overlay[overlay_keys[oi]]
                    if ids.size:
                        yield overlay_keys[oi], ids
                    oi += 1
                if oi < len(overlay_keys) and overlay_keys[oi] == key:
                    ids = self._overlay[key]
                    if ids.size:
                        yield key, ids
                    oi += 1
                else:
                    yield key, base.ids[base.offsets[pos]:base.offsets[pos + 1]]
        while oi < len(overlay_keys):
            ids = self._overlay[overlay_keys[oi]]
            if ids.size:
                yield overlay_keys[oi], ids
            oi += 1

    def same_contents(self, other: "LshIndex") -> bool:
        """True when both indexes hold identical buckets and parameters."""
        if self.params != other.params or len(self) != len(other):
            return False
        sentinel = object()
        for a, b in zip_longest(self._effective_buckets(),
                                other._effective_buckets(), fillvalue=sentinel):
            if a is sentinel or b is sentinel:
                return False
            if a[0] != b[0] or not np.array_equal(a[1], b[1]):
                return False
        return True

    def __eq__(self, other) -> bool:
        if not isinstance(other, LshIndex):
            return NotImplemented
        return self.same_contents(other)

    def stats(self) -> IndexStats:
        sizes = [ids.shape[0] for _, ids in self._effective_buckets()]
        sizes = np.asarray(sizes, dtype=np.int64)
        n_buckets = int(sizes.shape[0])
        params = self.params
        slots = params.n_bands * params.key_space  # python int, may be huge
        return IndexStats(
            n_classes=len(self),
            n_tables=params.n_bands,
            n_buckets=n_buckets,
            max_bucket=int(sizes.max()) if n_buckets else 0,
            mean_bucket=float(sizes.mean()) if n_buckets else 0.0,
            empty_band_fraction=float(1 - n_buckets / slots),
            bucket_size_hist=np.bincount(sizes) if n_buckets else np.zeros(1, np.int64),
            query_count=self.query_count,
            miss_count=self.miss_count,
        )

    # -- serialization ----------------------------------------------------

    def to_bytes(self) -> bytes:
        """Versioned binary form: header, then per-table bucket lists.

        Layout (little-endian): magic ``WTAI``, u32 version, u32 dim,
        u32 window_size, u32 n_perms, u32 n_bands, u64 seed,
        u64 n_classes, u64 query_count, u64 miss_count, u32 key_nbytes;
        then for each table: u32 n_buckets, and per bucket the key
        (key_nbytes), u32 n_ids, and the ids as u32.
        """
        params = self.params
        key_nbytes = max(1, (params.band_bits + 7) // 8)
        buf = io.BytesIO()
        buf.write(INDEX_MAGIC)
        buf.write(struct.pack(
            "<IIIIIQQQQI", INDEX_VERSION, params.dim, params.window_size,
            params.n_perms, params.n_bands, params.seed, len(self),
            self.query_count, self.miss_count, key_nbytes,
        ))
        space = params.key_space
        per_table: list[list[tuple[int, np.ndarray]]] = [
            [] for _ in range(params.n_bands)
        ]
        for comb, ids in self._effective_buckets():
            per_table[comb // space].append((comb % space, ids))
        for buckets in per_table:
            buf.write(struct.pack("<I", len(buckets)))
            for key, ids in buckets:
                buf.write(int(key).to_bytes(key_nbytes, "little"))
                buf.write(struct.pack("<I", ids.shape[0]))
                buf.write(np.ascontiguousarray(ids, dtype="<u4").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "LshIndex":
        buf = io.BytesIO(data)
        magic = buf.read(4)
        if magic != INDEX_MAGIC:
            raise ConfigError("not an index blob (bad magic)")
        (version, dim, window_size, n_perms, n_bands, seed, n_classes,
         query_count, miss_count, key_nbytes) = struct.unpack(
            "<IIIIIQQQQI", buf.read(struct.calcsize("<IIIIIQQQQI")))
        if version != INDEX_VERSION:
            raise ConfigError(f"unsupported index version {version}")
        params = WtaParams(dim=dim, window_size=window_size, n_perms=n_perms,
                           n_bands=n_bands, seed=seed)
        idx = cls(params)
        space = params.key_space
        combs: list[int] = []
        id_parts: list[np.ndarray] = []
        for m in range(n_bands):
            (n_buckets,) = struct.unpack("<I", buf.read(4))
            for _ in range(n_buckets):
                key = int.from_bytes(buf.read(key_nbytes), "little")
                (n_ids,) = struct.unpack("<I", buf.read(4))
                ids = np.frombuffer(buf.read(4 * n_ids), dtype="<u4").astype(np.int32)
                combs.append(m * space + key)
                id_parts.append(ids)
        idx.query_count = query_count
        idx.miss_count = miss_count
        if not combs:
            return idx
        if idx._narrow:
            lengths = np.array([p.shape[0] for p in id_parts], dtype=np.int64)
            flat_ids = np.concatenate(id_parts)
            flat_combs = np.repeat(np.array(combs, dtype=np.int64), lengths)
            order = np.lexsort((flat_combs, flat_ids))
            by_class_ids = flat_ids[order]
            by_class_combs = flat_combs[order]
            class_ids, starts = np.unique(by_class_ids, return_index=True)
            bounds = np.append(starts, by_class_ids.size)
            if np.any(np.diff(bounds) != params.n_bands):
                raise ConfigError("corrupt index: class missing from some tables")
            combined = by_class_combs.reshape(class_ids.size, params.n_bands)
            idx._install_bulk(class_ids.astype(np.int64), combined)
        else:
            stored: dict[int, list[int]] = {}
            for comb, ids in zip(combs, id_parts):
                comb = int(comb)
                idx._overlay[comb] = np.sort(ids).astype(np.int32)
                for cid in ids.tolist():
                    stored.setdefault(int(cid), []).append(comb)
            for cid, lst in stored.items():
                if len(lst) != params.n_bands:
                    raise ConfigError("corrupt index: class missing from some tables")
                idx._stored[cid] = tuple(sorted(lst))
        if len(idx) != n_classes:
            raise ConfigError("corrupt index: class count mismatch")
        return idx

    def save(self, path) -> None:
        from .serialize import atomic_write_bytes
        atomic_write_bytes(path, self.to_bytes())

    @classmethod
    def load(cls, path) -> "LshIndex":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())
