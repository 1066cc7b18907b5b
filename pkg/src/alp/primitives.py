"""Randomness and hashing building blocks.

Every randomized operation takes a :class:`RandomnessStream`. Streams are
identified by a master seed plus a tuple index, so per-trial and per-component
streams can be derived deterministically without sharing generator state.

Indices are 0-based throughout: a vector of dimension ``d`` has coordinates
``0 .. d-1``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .errors import ConfigurationError, DomainError, FormatError, ResourceError

# Dense outputs larger than this are refused by laplace_mechanism.
MAX_DENSE_ENTRIES = 50_000_000

# Keys are fed to a 64-bit multiply-add-shift hash, which is universal for
# keys below 2**32.
MAX_HASH_DOMAIN = 1 << 32

_U64 = np.uint64
_SHIFT32 = np.uint64(32)


class RandomnessStream:
    """A reproducible source of randomness keyed by ``(seed, index)``.

    Two streams with the same seed and index produce identical draws. Children
    derived with :meth:`child` are statistically independent of the parent and
    of each other (``numpy.random.SeedSequence`` spawn keys over Philox).

    ``noiseless=True`` is a test hook: rounding becomes round-half-up, bit
    flips never happen and Laplace draws are exactly zero.
    """

    def __init__(self, seed: int = 0, index: Iterable[int] = (), *, noiseless: bool = False):
        if seed < 0:
            raise DomainError(f"seed must be non-negative, got {seed}")
        self.seed = int(seed)
        self.index = tuple(int(i) for i in index)
        self.noiseless = bool(noiseless)
        self._seq = np.random.SeedSequence(self.seed, spawn_key=self.index)
        self.generator = np.random.Generator(np.random.Philox(self._seq))

    def child(self, *key: int) -> "RandomnessStream":
        return RandomnessStream(self.seed, self.index + tuple(key), noiseless=self.noiseless)

    def uint32_seed(self) -> int:
        """A 32-bit seed for generators that cannot consume a SeedSequence."""
        return int(self._seq.generate_state(1, dtype=np.uint32)[0])

    def __repr__(self) -> str:
        return f"RandomnessStream(seed={self.seed}, index={self.index}, noiseless={self.noiseless})"


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    delta: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.epsilon) and self.epsilon > 0):
            raise DomainError(f"epsilon must be positive and finite, got {self.epsilon}")
        if not (0 <= self.delta < 1):
            raise DomainError(f"delta must lie in [0, 1), got {self.delta}")

    @property
    def is_pure(self) -> bool:
        return self.delta == 0


@dataclass(frozen=True, eq=False)
class SparseVector:
    """A non-negative k-sparse vector of dimension ``d`` with entries bounded by ``u``.

    Only non-zero entries are stored, sorted by index. Reading an absent index
    yields 0.
    """

    d: int
    u: float
    k: int
    indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    values: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.float64))

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        val = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if self.d < 1:
            raise DomainError(f"dimension must be positive, got {self.d}")
        if not (math.isfinite(self.u) and self.u > 0):
            raise DomainError(f"bound u must be positive and finite, got {self.u}")
        if self.k < 1:
            raise DomainError(f"sparsity bound k must be positive, got {self.k}")
        if idx.shape != val.shape:
            raise DomainError("indices and values must have the same length")
        if len(idx) > self.k:
            raise DomainError(f"{len(idx)} non-zero entries exceed sparsity bound k={self.k}")
        if len(idx) and (idx[0] < 0 or idx[-1] >= self.d or np.any(np.diff(idx) <= 0)):
            raise DomainError("indices must be strictly increasing and lie in [0, d)")
        if np.any(~np.isfinite(val)) or np.any(val <= 0) or np.any(val > self.u):
            raise DomainError("stored values must satisfy 0 < v <= u")
        idx.setflags(write=False)
        val.setflags(write=False)
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "u", float(self.u))
        object.__setattr__(self, "k", int(self.k))
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)

    @classmethod
    def from_mapping(cls, d: int, u: float, entries: Mapping[int, float], k: int | None = None) -> "SparseVector":
        """Build from ``{index: value}``; zero values are dropped."""
        items = sorted((int(i), float(v)) for i, v in entries.items() if v != 0)
        idx = np.array([i for i, _ in items], dtype=np.int64)
        val = np.array([v for _, v in items], dtype=np.float64)
        return cls(d, u, k if k is not None else max(len(items), 1), idx, val)

    @property
    def nnz(self) -> int:
        return len(self.indices)

    def __getitem__(self, i: int) -> float:
        if not 0 <= i < self.d:
            raise DomainError(f"index {i} outside [0, {self.d})")
        pos = np.searchsorted(self.indices, i)
        if pos < len(self.indices) and self.indices[pos] == i:
            return float(self.values[pos])
        return 0.0

    def to_dense(self) -> np.ndarray:
        if self.d > MAX_DENSE_ENTRIES:
            raise ResourceError(f"refusing to materialize a dense vector of dimension {self.d}")
        out = np.zeros(self.d)
        out[self.indices] = self.values
        return out

    def scaled(self, factor: float) -> "SparseVector":
        return SparseVector(self.d, self.u * factor, self.k, self.indices, self.values * factor)


class HashFunctionSeq:
    """A sequence ``h_0 .. h_{m-1}`` of universal hash functions ``[d] -> [s]``.

    Function ``j`` is ``((a_j * key + b_j) mod 2**64) >> 32`` (strongly universal
    onto 32 bits for keys below 2**32), reduced to ``[s]`` by the
    multiply-high map ``(h * s) >> 32``. Only the ``(a_j, b_j)`` words are
    stored, so the sequence is self-describing once serialized.
    """

    MAGIC = b"ALPH"
    VERSION = 1
    _HEADER = struct.Struct("<4sI3Q")

    def __init__(self, d: int, s: int, a: np.ndarray, b: np.ndarray):
        if not 1 <= d <= MAX_HASH_DOMAIN:
            raise DomainError(f"hash domain must lie in [1, 2**32], got {d}")
        if not 1 <= s < MAX_HASH_DOMAIN:
            raise DomainError(f"hash range must lie in [1, 2**32), got {s}")
        a = np.ascontiguousarray(a, dtype=_U64).reshape(-1)
        b = np.ascontiguousarray(b, dtype=_U64).reshape(-1)
        if a.shape != b.shape or len(a) == 0:
            raise ConfigurationError("hash seed arrays must be non-empty and of equal length")
        a.setflags(write=False)
        b.setflags(write=False)
        self.d, self.s = int(d), int(s)
        self.a, self.b = a, b

    @classmethod
    def random(cls, d: int, s: int, m: int, rng: RandomnessStream) -> "HashFunctionSeq":
        words = rng.generator.integers(0, 1 << 64, size=(2, m), dtype=_U64, endpoint=False)
        return cls(d, s, words[0], words[1])

    @property
    def m(self) -> int:
        return len(self.a)

    def _apply(self, a: np.ndarray, b: np.ndarray, keys: np.ndarray) -> np.ndarray:
        with np.errstate(over="ignore"):
            high = (a * keys + b) >> _SHIFT32
            return ((high * _U64(self.s)) >> _SHIFT32).astype(np.int64)

    def __call__(self, j: int, key: int) -> int:
        return hash_eval(self, j, key)

    def rows(self, key: int) -> np.ndarray:
        """All ``m`` hash values of one key, ``out[j] = h_j(key)``."""
        self._check_keys(key)
        return self._apply(self.a, self.b, np.full(self.m, key, dtype=_U64))

    def rows_many(self, keys) -> np.ndarray:
        """Hash values for many keys, shape ``(m, len(keys))``."""
        keys = np.asarray(keys, dtype=np.int64).reshape(-1)
        self._check_keys(keys)
        k = keys.astype(_U64)[None, :]
        return self._apply(self.a[:, None], self.b[:, None], k)

    def _check_keys(self, keys) -> None:
        keys = np.asarray(keys)
        if keys.size and (keys.min() < 0 or keys.max() >= self.d):
            raise DomainError(f"hash key outside [0, {self.d})")

    def to_bytes(self) -> bytes:
        seeds = np.empty((self.m, 2), dtype="<u8")
        seeds[:, 0] = self.a
        seeds[:, 1] = self.b
        return self._HEADER.pack(self.MAGIC, self.VERSION, self.d, self.s, self.m) + seeds.tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes, offset: int = 0) -> tuple["HashFunctionSeq", int]:
        """Parse a hash block starting at ``offset``; returns ``(seq, next_offset)``."""
        try:
            magic, version, d, s, m = cls._HEADER.unpack_from(blob, offset)
        except struct.error as exc:
            raise FormatError("truncated hash block") from exc
        if magic != cls.MAGIC:
            raise FormatError(f"bad hash block magic {magic!r}")
        if version != cls.VERSION:
            raise FormatError(f"unsupported hash block version {version}")
        start = offset + cls._HEADER.size
        end = start + 16 * m
        if len(blob) < end:
            raise FormatError("truncated hash seed records")
        seeds = np.frombuffer(blob, dtype="<u8", count=2 * m, offset=start).reshape(m, 2)
        return cls(d, s, seeds[:, 0].copy(), seeds[:, 1].copy()), end

    def __eq__(self, other) -> bool:
        if not isinstance(other, HashFunctionSeq):
            return NotImplemented
        return (self.d, self.s) == (other.d, other.s) and np.array_equal(self.a, other.a) and np.array_equal(self.b, other.b)

    def __repr__(self) -> str:
        return f"HashFunctionSeq(d={self.d}, s={self.s}, m={self.m})"


def hash_eval(h: HashFunctionSeq, j: int, key: int) -> int:
    """Evaluate hash function ``j`` on ``key``."""
    if not 0 <= j < h.m:
        raise DomainError(f"hash function index {j} outside [0, {h.m})")
    if not 0 <= key < h.d:
        raise DomainError(f"hash key {key} outside [0, {h.d})")
    return int(h._apply(h.a[j : j + 1], h.b[j : j + 1], np.array([key], dtype=_U64))[0])


def _as_array(x):
    arr = np.asarray(x, dtype=np.float64)
    return arr, arr.ndim == 0


def random_round(r, rng: RandomnessStream):
    """Round ``r`` up with probability equal to its fractional part, else down.

    Accepts a scalar or an array; returns ``int`` or an ``int64`` array.
    """
    arr, scalar = _as_array(r)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise DomainError("random_round requires finite, non-negative input")
    floor = np.floor(arr)
    frac = arr - floor
    if rng.noiseless:
        up = frac >= 0.5
    else:
        up = rng.generator.random(arr.shape) < frac
    out = (floor + up).astype(np.int64)
    return int(out) if scalar else out


def randomized_response(b, p: float, rng: RandomnessStream):
    """Flip bit(s) ``b`` independently with probability ``p``."""
    if not 0 <= p <= 1:
        raise DomainError(f"flip probability must lie in [0, 1], got {p}")
    bits = np.asarray(b)
    scalar = bits.ndim == 0
    if np.any((bits != 0) & (bits != 1)):
        raise DomainError("randomized_response expects bits in {0, 1}")
    bits = bits.astype(np.uint8)
    if rng.noiseless or p == 0:
        out = bits.copy()
    else:
        out = bits ^ (rng.generator.random(bits.shape) < p).astype(np.uint8)
    return int(out) if scalar else out


def laplace_sample(scale: float, rng: RandomnessStream, size=None):
    """Draw from the zero-centred Laplace distribution by CDF inversion."""
    if not (math.isfinite(scale) and scale > 0):
        raise DomainError(f"Laplace scale must be positive, got {scale}")
    if rng.noiseless:
        return 0.0 if size is None else np.zeros(size)
    v = rng.generator.random(size)
    # random() is in [0, 1); v == 0 would map to -inf.
    v = np.where(v == 0.0, np.nextafter(0.0, 1.0), v)
    out = np.where(v < 0.5, scale * np.log(2.0 * v), -scale * np.log(2.0 * (1.0 - v)))
    return float(out) if size is None else out


def laplace_mechanism(x: SparseVector, budget: PrivacyBudget, rng: RandomnessStream) -> np.ndarray:
    """Add Lap(1/epsilon) to every coordinate and clamp to ``[0, u]``."""
    if budget.delta != 0:
        raise ConfigurationError("the Laplace mechanism is pure; delta must be 0")
    if x.d > MAX_DENSE_ENTRIES:
        raise ResourceError(f"dimension {x.d} is too large for a dense release")
    dense = x.to_dense() + laplace_sample(1.0 / budget.epsilon, rng, size=x.d)
    return np.clip(dense, 0.0, x.u)
