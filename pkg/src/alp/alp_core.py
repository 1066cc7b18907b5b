"""Approximate Laplace Projection: noisy unary embeddings of sparse vectors.

Each non-zero entry is scaled, randomly rounded to an integer ``y`` and written
in unary into an ``s x m`` bit matrix: column ``b`` receives a 1 at row
``h_b(i)`` for every ``b < y``. Every bit is then flipped with probability
``1/(alpha+2)``. An entry is read back by walking its ``m`` bits and picking
the prefix length that maximizes (#ones - #zeros).

The bit matrix is stored column-major and packed: column ``b`` occupies
``ceil(s/8)`` bytes, row ``a`` of that column being bit ``a % 8`` of byte
``a // 8``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import ConfigurationError, DomainError, FormatError
from .primitives import (
    HashFunctionSeq,
    RandomnessStream,
    SparseVector,
    random_round,
    randomized_response,
)


def _ceil_ratio(num: float, den: float) -> int:
    ratio = num / den
    # Guards against 1.1/0.1 == 11.000000000000002 rounding up to 12.
    return max(1, math.ceil(ratio - 1e-9 * max(1.0, ratio)))


@dataclass(frozen=True)
class AlpParams:
    alpha: float
    beta: float
    s: int
    epsilon: float = 1.0

    def __post_init__(self):
        for name in ("alpha", "beta", "epsilon"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ConfigurationError(f"{name} must be positive and finite, got {v}")
        if self.s < 1:
            raise ConfigurationError(f"hash range s must be positive, got {self.s}")

    @property
    def m(self) -> int:
        """Number of columns, ``ceil(beta * epsilon / alpha)``."""
        return _ceil_ratio(self.beta * self.epsilon, self.alpha)

    @property
    def flip_probability(self) -> float:
        return 1.0 / (self.alpha + 2.0)

    def check_sparsity(self, k: int) -> None:
        if not self.s > 2 * k:
            raise ConfigurationError(f"hash range s={self.s} must exceed 2k={2 * k}")


@dataclass(frozen=True)
class EstimationTrace:
    """Intermediate values of one estimate: prefix walk, argmax set, raw estimate."""

    prefix: np.ndarray
    argmax: tuple[int, ...]
    y_estimate: Fraction


@dataclass(frozen=True, eq=False)
class Embedding:
    """The private output of ALP projection: packed bit matrix plus hash functions.

    ``d``, ``u`` and ``k`` describe the vector that was projected; ``u`` is the
    clamping bound used by estimators.
    """

    params: AlpParams
    hashes: HashFunctionSeq
    bits: np.ndarray
    d: int
    u: float
    k: int

    MAGIC = b"ALPE"
    VERSION = 1
    _HEADER = struct.Struct("<4sIQdQdddQQ")

    def __post_init__(self):
        m, s = self.params.m, self.params.s
        if (self.hashes.m, self.hashes.s, self.hashes.d) != (m, s, self.d):
            raise ConfigurationError(
                f"hash sequence shape (m={self.hashes.m}, s={self.hashes.s}, d={self.hashes.d}) "
                f"does not match embedding (m={m}, s={s}, d={self.d})"
            )
        bits = np.ascontiguousarray(self.bits, dtype=np.uint8)
        if bits.shape != (m, (s + 7) // 8):
            raise ConfigurationError(f"packed bit matrix has shape {bits.shape}, expected {(m, (s + 7) // 8)}")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @classmethod
    def from_matrix(cls, params: AlpParams, hashes: HashFunctionSeq, matrix: np.ndarray, d: int, u: float, k: int) -> "Embedding":
        """Pack a boolean ``(s, m)`` matrix (row = hash value, column = function)."""
        matrix = np.asarray(matrix, dtype=bool)
        if matrix.shape != (params.s, params.m):
            raise ConfigurationError(f"bit matrix must have shape {(params.s, params.m)}")
        packed = np.packbits(matrix.T, axis=1, bitorder="little")
        return cls(params, hashes, packed, d, u, k)

    @property
    def nbits(self) -> int:
        return self.params.s * self.params.m

    def matrix(self) -> np.ndarray:
        """Unpacked ``(s, m)`` boolean view of the bits."""
        cols = np.unpackbits(self.bits, axis=1, count=self.params.s, bitorder="little")
        return cols.T.astype(bool)

    def bit(self, row: int, col: int) -> int:
        return int((self.bits[col, row >> 3] >> (row & 7)) & 1)

    def read_bits(self, i: int) -> np.ndarray:
        """The ``m`` bits ``z[h_b(i), b]`` belonging to index ``i``."""
        if not 0 <= i < self.d:
            raise DomainError(f"index {i} outside [0, {self.d})")
        rows = self.hashes.rows(i)
        cols = np.arange(self.params.m)
        return (self.bits[cols, rows >> 3] >> (rows & 7).astype(np.uint8)) & 1

    def read_bits_many(self, indices) -> np.ndarray:
        """Bits for many indices, shape ``(m, n)``."""
        rows = self.hashes.rows_many(indices)
        cols = np.arange(self.params.m)[:, None]
        return (self.bits[cols, rows >> 3] >> (rows & 7).astype(np.uint8)) & 1

    def to_bytes(self) -> bytes:
        p = self.params
        header = self._HEADER.pack(self.MAGIC, self.VERSION, self.d, self.u, self.k, p.alpha, p.beta, p.epsilon, p.s, p.m)
        return header + self.hashes.to_bytes() + self.bits.tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes, offset: int = 0) -> tuple["Embedding", int]:
        try:
            magic, version, d, u, k, alpha, beta, eps, s, m = cls._HEADER.unpack_from(blob, offset)
        except struct.error as exc:
            raise FormatError("truncated embedding header") from exc
        if magic != cls.MAGIC:
            raise FormatError(f"bad embedding magic {magic!r}")
        if version != cls.VERSION:
            raise FormatError(f"unsupported embedding version {version}")
        params = AlpParams(alpha, beta, s, eps)
        if params.m != m:
            raise FormatError(f"stored column count {m} disagrees with parameters ({params.m})")
        hashes, pos = HashFunctionSeq.from_bytes(blob, offset + cls._HEADER.size)
        nbytes = m * ((s + 7) // 8)
        if len(blob) < pos + nbytes:
            raise FormatError("truncated bit matrix")
        bits = np.frombuffer(blob, dtype=np.uint8, count=nbytes, offset=pos).reshape(m, (s + 7) // 8).copy()
        return cls(params, hashes, bits, d, u, k), pos + nbytes


def _check_inputs(x: SparseVector, params: AlpParams, hashes: HashFunctionSeq) -> None:
    params.check_sparsity(x.k)
    if (hashes.m, hashes.s, hashes.d) != (params.m, params.s, x.d):
        raise ConfigurationError(
            f"hash sequence (m={hashes.m}, s={hashes.s}, d={hashes.d}) does not match "
            f"parameters (m={params.m}, s={params.s}) and dimension d={x.d}"
        )


def _project_bits(indices: np.ndarray, scaled: np.ndarray, alpha: float, m: int, s: int, hashes: HashFunctionSeq, rng: RandomnessStream) -> np.ndarray:
    """Noisy packed ``(m, ceil(s/8))`` matrix for already-scaled values."""
    y = np.minimum(random_round(scaled / alpha, rng), m) if len(scaled) else np.zeros(0, dtype=np.int64)
    z = np.zeros((m, s), dtype=np.uint8)
    if len(indices):
        rows = hashes.rows_many(indices)
        cols = np.broadcast_to(np.arange(m)[:, None], rows.shape)
        written = cols < y[None, :]
        # Colliding writes OR together.
        z[cols[written], rows[written]] = 1
    z = randomized_response(z, 1.0 / (alpha + 2.0), rng)
    return np.packbits(z, axis=1, bitorder="little")


def alp1_project(x: SparseVector, params: AlpParams, hashes: HashFunctionSeq, rng: RandomnessStream) -> Embedding:
    """1-differentially private embedding of ``x`` (requires ``params.epsilon == 1``)."""
    if params.epsilon != 1:
        raise ConfigurationError("alp1_project is the epsilon=1 mechanism; use alp_project")
    _check_inputs(x, params, hashes)
    bits = _project_bits(x.indices, x.values, params.alpha, params.m, params.s, hashes, rng)
    return Embedding(params, hashes, bits, x.d, x.u, x.k)


def alp_project(x: SparseVector, params: AlpParams, hashes: HashFunctionSeq, rng: RandomnessStream) -> Embedding:
    """epsilon-differentially private embedding: ALP1 on ``x * epsilon`` with cap ``beta * epsilon``."""
    _check_inputs(x, params, hashes)
    bits = _project_bits(x.indices, x.values * params.epsilon, params.alpha, params.m, params.s, hashes, rng)
    return Embedding(params, hashes, bits, x.d, x.u, x.k)


def _trace(read: np.ndarray) -> EstimationTrace:
    prefix = np.concatenate(([0], np.cumsum(2 * read.astype(np.int64) - 1)))
    argmax = np.flatnonzero(prefix == prefix.max())
    return EstimationTrace(prefix, tuple(int(n) for n in argmax), Fraction(int(argmax.sum()), len(argmax)))


def estimate_from_bits(read, alpha: float) -> tuple[float, EstimationTrace]:
    """Unclamped estimate ``average(argmax) * alpha`` for an explicit bit sequence."""
    trace = _trace(np.asarray(read))
    return float(trace.y_estimate) * alpha, trace


def alp1_estimate(emb: Embedding, i: int) -> tuple[float, EstimationTrace]:
    """Estimate entry ``i`` of an ALP1 embedding, clamped to ``[0, u * epsilon]``."""
    value, trace = estimate_from_bits(emb.read_bits(i), emb.params.alpha)
    return min(max(value, 0.0), emb.u * emb.params.epsilon), trace


def alp_estimate(emb: Embedding, i: int) -> float:
    """Estimate entry ``i``, rescaled by ``1/epsilon`` and clamped to ``[0, u]``."""
    trace = _trace(emb.read_bits(i))
    value = float(trace.y_estimate) * (emb.params.alpha / emb.params.epsilon)
    return min(max(value, 0.0), emb.u)


def alp_estimate_many(emb: Embedding, indices, chunk: int = 4096) -> np.ndarray:
    """Vectorized :func:`alp_estimate` over many indices."""
    indices = np.asarray(indices, dtype=np.int64).reshape(-1)
    out = np.empty(len(indices))
    m = emb.params.m
    positions = np.arange(m + 1)[:, None]
    for lo in range(0, len(indices), chunk):
        part = indices[lo : lo + chunk]
        if len(part) and (part.min() < 0 or part.max() >= emb.d):
            raise DomainError(f"index outside [0, {emb.d})")
        read = emb.read_bits_many(part).astype(np.int64)
        prefix = np.zeros((m + 1, len(part)), dtype=np.int64)
        np.cumsum(2 * read - 1, axis=0, out=prefix[1:])
        hit = prefix == prefix.max(axis=0)
        # Integer sums then one true division: same float as Fraction(sum, count).
        sums = (hit * positions).sum(axis=0)
        counts = hit.sum(axis=0)
        out[lo : lo + len(part)] = [int(a) / int(c) for a, c in zip(sums, counts)]
    out *= emb.params.alpha / emb.params.epsilon
    return np.clip(out, 0.0, emb.u)
