"""Threshold release for large entries plus an ALP embedding capped at the threshold.

Large entries are answered from the noisy threshold output, everything else
from the embedding. The two parts draw from disjoint child streams, so their
privacy costs add up: ``epsilon1 + epsilon2`` (and ``delta`` in approximate
mode).

Signed vectors are handled by splitting into positive and negated-negative
parts, each released with its own combined structure. The split preserves
l1 distances between neighbours, so both halves run with the full budget.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .alp_core import AlpParams, Embedding, alp_estimate, alp_estimate_many, alp_project
from .errors import ConfigurationError, DomainError, FormatError
from .primitives import HashFunctionSeq, PrivacyBudget, RandomnessStream, SparseVector
from .threshold import (
    APPROXIMATE,
    MODES,
    PURE,
    NoisySparseVector,
    ThresholdParams,
    threshold_approx,
    threshold_pure,
)

# Child stream keys; fixed so a given master seed always feeds the same part.
THRESHOLD_STREAM = 0
ALP_STREAM = 1
HASH_STREAM = 2

DEFAULT_ALPHA = 3.0
DEFAULT_COLLISION_RATIO = 0.1


def threshold_params_for(mode: str, d: int, epsilon1: float, delta: float) -> ThresholdParams:
    """Threshold used by the combined structure; also the embedding's value cap."""
    if mode == PURE:
        return ThresholdParams.pure(d, epsilon1)
    if mode == APPROXIMATE:
        return ThresholdParams.approximate(epsilon1, delta)
    raise ConfigurationError(f"mode must be one of {MODES}, got {mode!r}")


def default_hash_range(k: int, collision_ratio: float = DEFAULT_COLLISION_RATIO) -> int:
    return max(2 * k + 1, math.ceil(k / collision_ratio))


@dataclass(frozen=True, eq=False)
class CombinedRepresentation:
    noisy: NoisySparseVector
    embedding: Embedding
    epsilon1: float
    epsilon2: float
    mode: str = PURE
    delta: float = 0.0

    MAGIC = b"ALPC"
    VERSION = 1
    _HEADER = struct.Struct("<4sIBddd")
    _MODE_CODES = {PURE: 0, APPROXIMATE: 1}

    def __post_init__(self):
        if self.epsilon1 <= 0 or self.epsilon2 <= 0:
            raise ConfigurationError("both budget shares must be positive")
        if self.embedding.params.epsilon != self.epsilon2:
            raise ConfigurationError("embedding epsilon must equal epsilon2")
        t = self.threshold
        if self.embedding.params.beta != t:
            raise ConfigurationError(f"embedding cap beta={self.embedding.params.beta} must equal threshold t={t}")
        if (self.noisy.d, self.noisy.u) != (self.embedding.d, self.embedding.u):
            raise ConfigurationError("threshold output and embedding describe different vectors")

    @property
    def threshold(self) -> float:
        return threshold_params_for(self.mode, self.embedding.d, self.epsilon1, self.delta).t

    @property
    def budget(self) -> PrivacyBudget:
        return PrivacyBudget(self.epsilon1 + self.epsilon2, self.delta)

    @property
    def d(self) -> int:
        return self.embedding.d

    @property
    def u(self) -> float:
        return self.embedding.u

    def to_bytes(self) -> bytes:
        head = self._HEADER.pack(self.MAGIC, self.VERSION, self._MODE_CODES[self.mode], self.epsilon1, self.epsilon2, self.delta)
        return head + self.noisy.to_bytes() + self.embedding.to_bytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "CombinedRepresentation":
        try:
            magic, version, code, eps1, eps2, delta = cls._HEADER.unpack_from(blob, 0)
        except struct.error as exc:
            raise FormatError("truncated combined header") from exc
        if magic != cls.MAGIC:
            raise FormatError(f"bad combined magic {magic!r}")
        if version != cls.VERSION:
            raise FormatError(f"unsupported combined version {version}")
        modes = {v: k for k, v in cls._MODE_CODES.items()}
        if code not in modes:
            raise FormatError(f"unknown mode code {code}")
        noisy, pos = NoisySparseVector.from_bytes(blob, cls._HEADER.size)
        emb, pos = Embedding.from_bytes(blob, pos)
        if pos != len(blob):
            raise FormatError(f"{len(blob) - pos} trailing bytes after combined representation")
        return cls(noisy, emb, eps1, eps2, modes[code], delta)


def resolve_split(budget: PrivacyBudget, split: tuple[float, float] | None) -> tuple[float, float]:
    if split is None:
        return budget.epsilon / 2.0, budget.epsilon / 2.0
    eps1, eps2 = map(float, split)
    if eps1 <= 0 or eps2 <= 0:
        raise ConfigurationError(f"budget split must be positive, got {split}")
    if not math.isclose(eps1 + eps2, budget.epsilon, rel_tol=1e-12):
        raise ConfigurationError(f"split {split} does not sum to epsilon={budget.epsilon}")
    return eps1, eps2


def combined_project(
    x: SparseVector,
    budget: PrivacyBudget,
    rng: RandomnessStream,
    *,
    mode: str = PURE,
    split: tuple[float, float] | None = None,
    alpha: float = DEFAULT_ALPHA,
    s: int | None = None,
    threshold_rng: RandomnessStream | None = None,
    alp_rng: RandomnessStream | None = None,
) -> CombinedRepresentation:
    """Release ``x`` as threshold output + ALP embedding with ``beta = t``.

    ``split`` gives ``(epsilon1, epsilon2)`` explicitly (default: even halves).
    ``s`` defaults to ``ceil(10 k)``. ``threshold_rng`` / ``alp_rng`` override
    the child streams derived from ``rng``.
    """
    if mode == PURE and budget.delta != 0:
        raise ConfigurationError("pure mode requires delta = 0")
    if mode == APPROXIMATE and budget.delta <= 0:
        raise ConfigurationError("approximate mode requires delta > 0")
    eps1, eps2 = resolve_split(budget, split)
    tparams = threshold_params_for(mode, x.d, eps1, budget.delta)
    s = default_hash_range(x.k) if s is None else int(s)
    params = AlpParams(alpha, tparams.t, s, eps2)
    params.check_sparsity(x.k)

    t_rng = threshold_rng if threshold_rng is not None else rng.child(THRESHOLD_STREAM)
    a_rng = alp_rng if alp_rng is not None else rng.child(ALP_STREAM)
    noisy = (threshold_pure if mode == PURE else threshold_approx)(x, tparams, t_rng)
    hashes = HashFunctionSeq.random(x.d, s, params.m, a_rng.child(HASH_STREAM))
    emb = alp_project(x, params, hashes, a_rng)
    return CombinedRepresentation(noisy, emb, eps1, eps2, mode, budget.delta)


def combined_estimate(rep: CombinedRepresentation, i: int) -> float:
    """Stored noisy value when present, otherwise the embedding estimate; in ``[0, u]``."""
    stored = rep.noisy.raw(i)
    if stored != 0:
        return min(max(stored, 0.0), rep.u)
    return alp_estimate(rep.embedding, i)


def combined_estimate_many(rep: CombinedRepresentation, indices) -> np.ndarray:
    indices = np.asarray(indices, dtype=np.int64).reshape(-1)
    if len(indices) and (indices.min() < 0 or indices.max() >= rep.d):
        raise DomainError(f"index outside [0, {rep.d})")
    present, stored = rep.noisy.lookup_many(indices)
    out = stored.copy()
    missing = ~present
    if missing.any():
        out[missing] = alp_estimate_many(rep.embedding, indices[missing])
    return out


@dataclass(frozen=True, eq=False)
class SignedSparseVector:
    """A k-sparse real vector; entries may be negative, bounded by ``u`` in magnitude."""

    d: int
    u: float
    k: int
    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        val = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if idx.shape != val.shape:
            raise DomainError("indices and values must have the same length")
        if np.any(val == 0) or np.any(np.abs(val) > self.u) or np.any(~np.isfinite(val)):
            raise DomainError("stored values must be non-zero with |v| <= u")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)
        # Validates dimension, ordering and sparsity.
        self.split()

    @classmethod
    def from_mapping(cls, d: int, u: float, entries, k: int | None = None) -> "SignedSparseVector":
        items = sorted((int(i), float(v)) for i, v in entries.items() if v != 0)
        return cls(d, u, k if k is not None else max(len(items), 1), [i for i, _ in items], [v for _, v in items])

    def split(self) -> tuple[SparseVector, SparseVector]:
        """``(x, y)`` with ``x = max(v, 0)`` and ``y = -min(v, 0)``."""
        pos = self.values > 0
        x = SparseVector(self.d, self.u, self.k, self.indices[pos], self.values[pos])
        y = SparseVector(self.d, self.u, self.k, self.indices[~pos], -self.values[~pos])
        return x, y


@dataclass(frozen=True, eq=False)
class SignedRepresentation:
    positive: CombinedRepresentation
    negative: CombinedRepresentation


def signed_project(v: SignedSparseVector, budget: PrivacyBudget, rng: RandomnessStream, **kwargs) -> SignedRepresentation:
    """Release both sign halves of ``v``, each with the full budget."""
    x, y = v.split()
    return SignedRepresentation(
        combined_project(x, budget, rng.child(0), **kwargs),
        combined_project(y, budget, rng.child(1), **kwargs),
    )


def signed_estimate(rep: SignedRepresentation, i: int) -> float:
    return combined_estimate(rep.positive, i) - combined_estimate(rep.negative, i)
