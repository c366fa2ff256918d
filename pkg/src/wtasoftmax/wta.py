"""Winner-take-all ordinal hashing.

A vector is hashed by running many pseudo-random permutations over its
coordinates and, for each permutation, recording which of the first
``window_size`` permuted coordinates holds the largest value.  The
resulting code vector depends only on the relative order of coordinates,
so it is invariant under any strictly increasing elementwise transform.

Codes are grouped into bands of ``band_width = n_perms // n_bands``
consecutive entries.  Each band packs its entries into one integer key
(little-endian base-``window_size``); two vectors "match on a band" when
all entries of that band agree.  Band keys feed the banded hash tables in
:mod:`wtasoftmax.lsh`.

Permutations are drawn by a partial Fisher-Yates shuffle driven by a
single sequential splitmix64 stream, so a ``(seed, dim, window_size,
n_perms)`` tuple always produces the same permutations, on any platform.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, InputError

_MASK64 = (1 << 64) - 1
_SPLITMIX_GAMMA = 0x9E3779B97F4A7C15
_SPLITMIX_MIX1 = 0xBF58476D1CE4E5B9
_SPLITMIX_MIX2 = 0x94D049BB133111EB

# Rows-per-chunk budget for batched hashing keeps the (rows, n_perms,
# window_size) gather under ~64 MiB.
_CHUNK_BUDGET = 8 * 1024 * 1024


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state once; return ``(new_state, output)``."""
    state = (state + _SPLITMIX_GAMMA) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * _SPLITMIX_MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _SPLITMIX_MIX2) & _MASK64
    return state, z ^ (z >> 31)


@dataclass(frozen=True)
class WtaParams:
    """Hash configuration.

    dim: input dimensionality.
    window_size: coordinates compared per permutation; a power of two in
        ``[2, dim]`` so every code fits exactly ``log2(window_size)`` bits.
    n_perms: number of permutations (total code length).
    n_bands: number of bands; must divide ``n_perms``.
    seed: 64-bit seed for permutation generation.
    """

    dim: int
    window_size: int = 16
    n_perms: int = 3000
    n_bands: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.dim < 1 or self.n_perms < 1 or self.n_bands < 1:
            raise ConfigError("dim, n_perms and n_bands must all be >= 1")
        k = self.window_size
        if k < 2 or k > self.dim:
            raise ConfigError(f"window_size must be in [2, dim]; got {k} with dim={self.dim}")
        if k & (k - 1) != 0:
            raise ConfigError(f"window_size must be a power of two; got {k}")
        if self.n_perms % self.n_bands != 0:
            raise ConfigError(
                f"n_bands ({self.n_bands}) must divide n_perms ({self.n_perms})"
            )
        object.__setattr__(self, "seed", self.seed & _MASK64)

    @property
    def band_width(self) -> int:
        """Code entries per band."""
        return self.n_perms // self.n_bands

    @property
    def bits_per_code(self) -> int:
        return self.window_size.bit_length() - 1

    @property
    def band_bits(self) -> int:
        """Width of one band key in bits."""
        return self.band_width * self.bits_per_code

    @property
    def key_space(self) -> int:
        """Number of possible band keys (python int; may be huge)."""
        return self.window_size ** self.band_width

    @property
    def packed_nbytes(self) -> int:
        """Exact size of a packed code, ceil(n_perms * bits_per_code / 8)."""
        return (self.n_perms * self.bits_per_code + 7) // 8


@dataclass(frozen=True)
class PermutationSet:
    """First-``window_size`` prefixes of ``n_perms`` permutations of [0, dim)."""

    perms: np.ndarray  # (n_perms, window_size) int32
    dim: int
    seed: int

    def __post_init__(self):
        perms = np.ascontiguousarray(self.perms, dtype=np.int32)
        object.__setattr__(self, "perms", perms)
        if perms.ndim != 2:
            raise ConfigError("perms must be a 2-d array")
        if perms.size and (perms.min() < 0 or perms.max() >= self.dim):
            raise ConfigError("permutation entries must lie in [0, dim)")
        sorted_rows = np.sort(perms, axis=1)
        if perms.shape[1] > 1 and (np.diff(sorted_rows, axis=1) == 0).any():
            raise ConfigError("permutation entries must be distinct within each row")

    @property
    def n_perms(self) -> int:
        return self.perms.shape[0]

    @property
    def window_size(self) -> int:
        return self.perms.shape[1]


def gen_permutations(params: WtaParams) -> PermutationSet:
    """Generate the permutation prefixes for ``params``.

    Each row is the first ``window_size`` entries of a uniformly sampled
    permutation of ``[0, dim)``, produced by a partial Fisher-Yates shuffle.
    All rows consume one sequential splitmix64 stream seeded with
    ``params.seed``, so the set is a pure function of
    ``(seed, dim, window_size, n_perms)``.
    """
    d = params.dim
    k = params.window_size
    out = np.empty((params.n_perms, k), dtype=np.int32)
    state = params.seed
    for p in range(params.n_perms):
        # Sparse Fisher-Yates: only displaced slots are tracked, so cost is
        # O(window_size) per permutation instead of O(dim).
        slots: dict[int, int] = {}
        for i in range(k):
            state, raw = splitmix64(state)
            j = i + raw % (d - i)
            out[p, i] = slots.get(j, j)
            slots[j] = slots.get(i, i)
    return PermutationSet(perms=out, dim=d, seed=params.seed)


def _code_dtype(window_size: int) -> np.dtype:
    if window_size <= 256:
        return np.dtype(np.uint8)
    if window_size <= 65536:
        return np.dtype(np.uint16)
    return np.dtype(np.uint32)


@dataclass(frozen=True)
class WtaCode:
    """Ordinal hash of one vector: per-permutation argmax positions."""

    codes: np.ndarray  # (n_perms,) unsigned ints in [0, window_size)
    window_size: int

    def __post_init__(self):
        codes = np.ascontiguousarray(self.codes)
        object.__setattr__(self, "codes", codes)
        if codes.ndim != 1:
            raise ConfigError("codes must be 1-d")
        if codes.size and int(codes.max()) >= self.window_size:
            raise ConfigError("code values must be < window_size")

    @property
    def n_perms(self) -> int:
        return self.codes.shape[0]

    @property
    def packed(self) -> bytes:
        """Bit-packed code: entry ``p`` occupies bits ``[p*b, (p+1)*b)`` of the
        little-endian bitstream, ``b = log2(window_size)``."""
        bits_per = self.window_size.bit_length() - 1
        if self.window_size & (self.window_size - 1) != 0:
            raise ConfigError("packing requires a power-of-two window_size")
        shifts = np.arange(bits_per, dtype=np.uint32)
        bits = (self.codes[:, None].astype(np.uint32) >> shifts) & 1
        return np.packbits(bits.astype(np.uint8).ravel(), bitorder="little").tobytes()

    @classmethod
    def from_packed(cls, data: bytes, n_perms: int, window_size: int) -> "WtaCode":
        """Inverse of :attr:`packed`."""
        bits_per = window_size.bit_length() - 1
        if window_size & (window_size - 1) != 0:
            raise ConfigError("packing requires a power-of-two window_size")
        raw = np.frombuffer(data, dtype=np.uint8)
        bits = np.unpackbits(raw, count=n_perms * bits_per, bitorder="little")
        weights = (1 << np.arange(bits_per, dtype=np.uint32))
        codes = bits.reshape(n_perms, bits_per).astype(np.uint32) @ weights
        return cls(codes=codes.astype(_code_dtype(window_size)), window_size=window_size)


def _check_input(x, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != dim:
        raise DimensionError(f"expected a vector of length {dim}, got shape {x.shape}")
    if np.isnan(x).any():
        raise InputError("input contains NaN; ordinal comparison is undefined")
    return x


def wta_hash(x, perms: PermutationSet) -> WtaCode:
    """Hash one vector.

    ``codes[p]`` is the position of the maximum of ``x[perms[p]]``; ties go
    to the smallest position (first occurrence).
    """
    x = _check_input(x, perms.dim)
    windows = x[perms.perms]  # (n_perms, window_size)
    codes = np.argmax(windows, axis=1)  # argmax takes the first maximum
    return WtaCode(codes=codes.astype(_code_dtype(perms.window_size)),
                   window_size=perms.window_size)


def wta_hash_many(X, perms: PermutationSet) -> np.ndarray:
    """Hash the rows of ``X``; returns an ``(n_rows, n_perms)`` code matrix.

    Processed in chunks to bound the size of the intermediate gather.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != perms.dim:
        raise DimensionError(f"expected (n, {perms.dim}) rows, got shape {X.shape}")
    if np.isnan(X).any():
        raise InputError("input contains NaN; ordinal comparison is undefined")
    n = X.shape[0]
    out = np.empty((n, perms.n_perms), dtype=_code_dtype(perms.window_size))
    chunk = max(1, _CHUNK_BUDGET // max(1, perms.n_perms * perms.window_size))
    for lo in range(0, n, chunk):
        hi = min(n, lo + chunk)
        windows = X[lo:hi][:, perms.perms]  # (rows, n_perms, window_size)
        out[lo:hi] = np.argmax(windows, axis=2)
    return out


def band_keys(code: WtaCode, params: WtaParams) -> np.ndarray:
    """Pack a code into its ``n_bands`` band keys.

    Band ``m`` covers code entries ``[m*r, (m+1)*r)`` with
    ``r = band_width``; entry ``j`` contributes ``code * window_size**j``
    (little-endian packing).  Returns a uint64 array when keys fit 63 bits,
    otherwise an object array of python ints.
    """
    if code.n_perms != params.n_perms:
        raise DimensionError(
            f"code has {code.n_perms} entries, params expect {params.n_perms}"
        )
    if code.window_size != params.window_size:
        raise ConfigError("code window_size does not match params")
    r = params.band_width
    grouped = code.codes.reshape(params.n_bands, r)
    if params.band_bits <= 63:
        mult = params.window_size ** np.arange(r, dtype=np.int64)
        return (grouped.astype(np.int64) @ mult).astype(np.uint64)
    k = params.window_size
    keys = [sum(int(c) * k**j for j, c in enumerate(row)) for row in grouped]
    return np.array(keys, dtype=object)


def band_keys_many(codes: np.ndarray, params: WtaParams) -> np.ndarray:
    """Band keys for an ``(n_rows, n_perms)`` code matrix; int64 output.

    Only valid when one band key fits 63 bits (see :func:`band_keys`).
    """
    if params.band_bits > 63:
        raise ConfigError("band keys wider than 63 bits need the scalar path")
    if codes.ndim != 2 or codes.shape[1] != params.n_perms:
        raise DimensionError(f"expected (n, {params.n_perms}) codes, got {codes.shape}")
    r = params.band_width
    mult = params.window_size ** np.arange(r, dtype=np.int64)
    grouped = codes.reshape(codes.shape[0], params.n_bands, r)
    return grouped.astype(np.int64) @ mult
