"""Noisy-threshold releases for large entries.

``threshold_pure`` adds Lap(1/epsilon) to every coordinate and keeps values of
at least ``t``. The zero coordinates are never touched one by one: the number
of zeros that survive is Binomial(d - nnz, P[Lap >= t]) and their values follow
the Laplace tail above ``t``, which gives the same output distribution as the
dense computation.

``threshold_approx`` only noises non-zero entries (after randomly rounding
entries below 1), giving (epsilon, delta)-DP with an output that is always
k-sparse.
"""

from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DomainError, FormatError
from .primitives import RandomnessStream, SparseVector, laplace_sample, random_round

PURE = "pure"
APPROXIMATE = "approximate"
MODES = (PURE, APPROXIMATE)


def pure_threshold(d: int, epsilon: float) -> float:
    """Default pure-mode threshold ``ln(d/2)/epsilon``: one zero survives in expectation."""
    return math.log(d / 2.0) / epsilon


def approx_threshold(epsilon: float, delta: float) -> float:
    """Approximate-mode threshold ``ln(1/delta)/epsilon + 2``."""
    return math.log(1.0 / delta) / epsilon + 2.0


@dataclass(frozen=True)
class ThresholdParams:
    epsilon: float
    t: float
    mode: str = PURE
    delta: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.epsilon) and self.epsilon > 0):
            raise ConfigurationError(f"epsilon must be positive, got {self.epsilon}")
        if not (math.isfinite(self.t) and self.t > 0):
            raise ConfigurationError(f"threshold must be positive, got {self.t}")
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == APPROXIMATE and not 0 < self.delta < 1:
            raise ConfigurationError(f"approximate mode needs 0 < delta < 1, got {self.delta}")
        if self.mode == PURE and self.delta != 0:
            raise ConfigurationError("pure mode requires delta = 0")

    @classmethod
    def pure(cls, d: int, epsilon: float) -> "ThresholdParams":
        return cls(epsilon, pure_threshold(d, epsilon), PURE)

    @classmethod
    def approximate(cls, epsilon: float, delta: float) -> "ThresholdParams":
        if not 0 < delta < 1:
            raise ConfigurationError(f"approximate mode needs 0 < delta < 1, got {delta}")
        return cls(epsilon, approx_threshold(epsilon, delta), APPROXIMATE, delta)


class NoisySparseVector:
    """Sparse map of released noisy values; absent indices read as 0.

    Stored values are the raw noisy values (all >= t). Reads through
    :meth:`value` are clamped to ``[0, u]``.
    """

    _HEADER = struct.Struct("<QdQ")
    _PAIR = np.dtype([("index", "<u8"), ("value", "<f8")])

    def __init__(self, d: int, u: float, indices, values):
        idx = np.asarray(indices, dtype=np.int64).reshape(-1)
        val = np.asarray(values, dtype=np.float64).reshape(-1)
        if idx.shape != val.shape:
            raise DomainError("indices and values must have the same length")
        order = np.argsort(idx, kind="stable")
        idx, val = idx[order], val[order]
        if len(idx) and (idx[0] < 0 or idx[-1] >= d or np.any(np.diff(idx) == 0)):
            raise DomainError("indices must be distinct and lie in [0, d)")
        idx.setflags(write=False)
        val.setflags(write=False)
        self.d, self.u = int(d), float(u)
        self.indices, self.values = idx, val

    def __len__(self) -> int:
        return len(self.indices)

    def raw(self, i: int) -> float:
        """The stored (unclamped) value, or 0 when absent."""
        if not 0 <= i < self.d:
            raise DomainError(f"index {i} outside [0, {self.d})")
        pos = np.searchsorted(self.indices, i)
        if pos < len(self.indices) and self.indices[pos] == i:
            return float(self.values[pos])
        return 0.0

    def value(self, i: int) -> float:
        return min(max(self.raw(i), 0.0), self.u)

    def __getitem__(self, i: int) -> float:
        return self.value(i)

    def lookup_many(self, indices) -> tuple[np.ndarray, np.ndarray]:
        """``(present mask, clamped values)`` for many indices."""
        indices = np.asarray(indices, dtype=np.int64)
        pos = np.searchsorted(self.indices, indices)
        pos_c = np.minimum(pos, max(len(self.indices) - 1, 0))
        present = (pos < len(self.indices)) & (self.indices[pos_c] == indices) if len(self.indices) else np.zeros(indices.shape, bool)
        vals = np.where(present, self.values[pos_c] if len(self.indices) else 0.0, 0.0)
        return present, np.clip(vals, 0.0, self.u)

    def to_bytes(self) -> bytes:
        pairs = np.empty(len(self), dtype=self._PAIR)
        pairs["index"] = self.indices
        pairs["value"] = self.values
        return self._HEADER.pack(self.d, self.u, len(self)) + pairs.tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes, offset: int = 0) -> tuple["NoisySparseVector", int]:
        try:
            d, u, count = cls._HEADER.unpack_from(blob, offset)
        except struct.error as exc:
            raise FormatError("truncated sparse vector header") from exc
        start = offset + cls._HEADER.size
        end = start + count * cls._PAIR.itemsize
        if len(blob) < end:
            raise FormatError("truncated sparse vector entries")
        pairs = np.frombuffer(blob, dtype=cls._PAIR, count=count, offset=start)
        return cls(d, u, pairs["index"].astype(np.int64), pairs["value"].copy()), end

    def __eq__(self, other) -> bool:
        if not isinstance(other, NoisySparseVector):
            return NotImplemented
        return (self.d, self.u) == (other.d, other.u) and np.array_equal(self.indices, other.indices) and np.array_equal(self.values, other.values)

    def __repr__(self) -> str:
        return f"NoisySparseVector(d={self.d}, u={self.u}, stored={len(self)})"


def _zero_ranks_to_indices(ranks: np.ndarray, nonzero: np.ndarray) -> np.ndarray:
    # The r-th zero coordinate sits at r + #(non-zero indices at or below it).
    shifted = nonzero - np.arange(len(nonzero))
    return ranks + np.searchsorted(shifted, ranks, side="right")


def threshold_pure(x: SparseVector, params: ThresholdParams, rng: RandomnessStream) -> NoisySparseVector:
    """Pure-DP threshold release, sampled without touching all ``d`` coordinates."""
    if params.mode != PURE:
        raise ConfigurationError("threshold_pure needs a pure-mode ThresholdParams")
    eps, t = params.epsilon, params.t
    g = rng.generator
    noisy = x.values + laplace_sample(1.0 / eps, rng, size=x.nnz)
    keep = noisy >= t
    idx, val = [x.indices[keep]], [noisy[keep]]

    n_zero = x.d - x.nnz
    if not rng.noiseless and n_zero:
        survive = 0.5 * math.exp(-t * eps)
        count = int(g.binomial(n_zero, survive))
        if count:
            ranks = g.choice(n_zero, size=count, replace=False)
            idx.append(_zero_ranks_to_indices(np.sort(ranks), x.indices))
            # Inverse CDF of Lap(1/eps) restricted to [t, inf).
            val.append(t - np.log1p(-g.random(count)) / eps)
    return NoisySparseVector(x.d, x.u, np.concatenate(idx), np.concatenate(val))


def threshold_approx(x: SparseVector, params: ThresholdParams, rng: RandomnessStream) -> NoisySparseVector:
    """(epsilon, delta)-DP threshold release over non-zero entries only."""
    if params.mode != APPROXIMATE or params.delta <= 0:
        raise ConfigurationError("threshold_approx needs an approximate-mode ThresholdParams with delta > 0")
    if params.delta > 1.0 / x.k:
        warnings.warn(f"delta={params.delta} exceeds 1/k={1.0 / x.k}; the maximum-error guarantee assumes delta = O(1/k)", stacklevel=2)
    small = x.values < 1.0
    y = x.values.copy()
    if small.any():
        y[small] = random_round(x.values[small], rng)
    noisy = y + laplace_sample(1.0 / params.epsilon, rng, size=x.nnz)
    keep = (y != 0) & (noisy >= params.t)
    out = NoisySparseVector(x.d, x.u, x.indices[keep], noisy[keep])
    assert len(out) <= x.k
    return out
