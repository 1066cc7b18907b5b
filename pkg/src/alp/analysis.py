"""Closed-form error bounds and brute-force oracles.

Notation: ``alpha`` is the scaling parameter, ``collision_ratio`` is ``k/s``
(an upper bound on the per-bit hash collision probability). Collisions make
trailing bits read 1 with probability ``1/(gamma+2)`` where
``gamma = (alpha+2)/(1 + alpha k/s) - 2``; ``p = 1/(gamma+2)`` and ``q = 1-p``
then parametrize the random walks behind every bound.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .alp_core import AlpParams
from .errors import ConfigurationError, DomainError, ResourceError
from .primitives import HashFunctionSeq, RandomnessStream, SparseVector

# Largest s*m for which dp_ratio_oracle enumerates all 2**(s*m) outputs.
MAX_ORACLE_BITS = 16


def gamma(alpha: float, collision_ratio: float) -> float:
    if not alpha > 0:
        raise DomainError(f"alpha must be positive, got {alpha}")
    if not 0 <= collision_ratio < 0.5:
        raise DomainError(f"collision ratio must lie in [0, 1/2), got {collision_ratio}")
    return (alpha + 2.0) / (1.0 + alpha * collision_ratio) - 2.0


@dataclass(frozen=True)
class BoundQuery:
    alpha: float
    collision_ratio: float
    epsilon: float = 1.0
    tau: float | None = None
    psi: float | None = None

    def __post_init__(self):
        if not self.epsilon > 0:
            raise DomainError(f"epsilon must be positive, got {self.epsilon}")
        if self.gamma <= 0:
            raise DomainError("collision ratio too large: gamma must be positive")

    @property
    def gamma(self) -> float:
        return gamma(self.alpha, self.collision_ratio)

    @property
    def p(self) -> float:
        return 1.0 / (self.gamma + 2.0)

    @property
    def q(self) -> float:
        return 1.0 - self.p


def random_walk_last_nonneg_expectation(p: float) -> float:
    """Expected last step ``n`` with ``S_n >= 0`` of a walk stepping +1 w.p. ``p < 1/2``."""
    if not 0 <= p < 0.5:
        raise DomainError(f"walk must drift downwards (0 <= p < 1/2), got p={p}")
    q = 1.0 - p
    return 4.0 * p * q / (q - p) ** 2


def expected_error_bound(alpha: float, collision_ratio: float, epsilon: float = 1.0) -> float:
    """Upper bound on E|x_i - x~_i| for entries below the cap."""
    g = gamma(alpha, collision_ratio)
    if g <= 0:
        raise DomainError("collision ratio too large: gamma must be positive")
    walk = (4 * alpha + 4) / alpha**2 + (4 * g + 4) / g**2
    return (0.5 + walk) * alpha / epsilon


def tail_probability_bound(query: BoundQuery) -> float:
    """Bound on ``P[|y_i - y~_i| >= tau]`` in rounded units, capped at 1."""
    if query.tau is None or not query.tau > 0:
        raise DomainError(f"tau must be positive, got {query.tau}")
    p, q = query.p, query.q
    bound = 2.0 * (4 * p * q) ** (query.tau / 2.0) / (math.sqrt(math.pi) * (q - p))
    return min(1.0, bound)


def value_tail_probability_bound(query: BoundQuery) -> float:
    """Bound on ``P[|x_i - x~_i| >= tau]`` in value units; needs ``tau >= alpha/epsilon``."""
    if query.tau is None or query.tau < query.alpha / query.epsilon:
        raise DomainError("tau must be at least alpha/epsilon")
    p, q = query.p, query.q
    exponent = query.tau * query.epsilon / (2 * query.alpha) - 0.5
    return min(1.0, 2.0 * (4 * p * q) ** exponent / (math.sqrt(math.pi) * (q - p)))


def error_quantile_bound(query: BoundQuery) -> float:
    """Error magnitude not exceeded with probability at least ``1 - psi``."""
    psi = query.psi
    if psi is None or not 0 < psi < 1:
        raise DomainError(f"psi must lie in (0, 1), got {psi}")
    p, q = query.p, query.q
    steps = 2.0 * math.log(2.0 / (psi * math.sqrt(math.pi) * (q - p))) / math.log(1.0 / (4 * p * q))
    return (1.0 + steps) * query.alpha / query.epsilon


def laplace_tail_bound(psi: float, epsilon: float) -> float:
    """``ln(1/psi)/epsilon``: |Lap(1/epsilon)| stays below this w.p. ``1 - psi``."""
    if not 0 < psi <= 1:
        raise DomainError(f"psi must lie in (0, 1], got {psi}")
    if not epsilon > 0:
        raise DomainError(f"epsilon must be positive, got {epsilon}")
    return math.log(1.0 / psi) / epsilon


def binomial_series_closed_form(z: float) -> float:
    """``sum_k k C(2k, k) z^k = 2z / (1 - 4z)^(3/2)`` for ``0 <= z < 1/4``."""
    if not 0 <= z < 0.25:
        raise DomainError(f"series diverges outside [0, 1/4), got z={z}")
    return 2.0 * z / (1.0 - 4.0 * z) ** 1.5


def binomial_series_partial_sum(z: float, terms: int) -> float:
    """``sum_{k=0}^{terms} k C(2k, k) z^k`` by direct summation."""
    if not 0 <= z < 0.25:
        raise DomainError(f"series diverges outside [0, 1/4), got z={z}")
    total = 0.0
    central = 1.0  # C(2k, k) z^k
    for k in range(1, terms + 1):
        central *= 2.0 * (2 * k - 1) / k * z
        total += k * central
    return total


def simulate_last_nonneg_steps(p: float, walks: int, length: int, rng: RandomnessStream) -> np.ndarray:
    """Monte Carlo sample of the last non-negative step of walks truncated at ``length``."""
    if not 0 <= p < 0.5:
        raise DomainError(f"walk must drift downwards, got p={p}")
    out = np.empty(walks, dtype=np.int64)
    _kernels.last_nonnegative_steps(rng.uint32_seed(), float(p), int(length), out)
    return out


def walk_truncation_residual(p: float, length: int) -> float:
    """Upper bound on ``P[last non-negative step > length]`` for an infinite walk."""
    q = 1.0 - p
    return min(1.0, (4 * p * q) ** (length / 2.0) / (math.sqrt(math.pi) * (q - p)))


# --- exact privacy enumeration ------------------------------------------------


def _rounding_outcomes(x: SparseVector, scale: float, alpha: float, m: int):
    """Per-entry ``[(y, probability), ...]`` of the capped random rounding."""
    per_entry = []
    for v in x.values:
        r = v * scale / alpha
        lo = math.floor(r)
        frac = r - lo
        opts = {}
        for y, pr in ((lo, 1.0 - frac), (lo + 1, frac)):
            if pr > 0:
                y = min(y, m)
                opts[y] = opts.get(y, 0.0) + pr
        per_entry.append(sorted(opts.items()))
    return per_entry


def output_distribution(x: SparseVector, params: AlpParams, hashes: HashFunctionSeq) -> np.ndarray:
    """Exact probability of each of the ``2**(s*m)`` noisy bit matrices.

    Output pattern ``o`` encodes bit ``(row a, column b)`` at position
    ``b * s + a``. Randomness is marginalized over the joint rounding of all
    entries; the hash functions are held fixed.
    """
    s, m = params.s, params.m
    nbits = s * m
    if nbits > MAX_ORACLE_BITS:
        raise ResourceError(f"s*m = {nbits} exceeds the enumerable limit {MAX_ORACLE_BITS}")
    if (hashes.m, hashes.s, hashes.d) != (m, s, x.d):
        raise ConfigurationError("hash sequence does not match parameters")
    p = params.flip_probability
    q = 1.0 - p
    patterns = (np.arange(1 << nbits, dtype=np.int64)[:, None] >> np.arange(nbits)) & 1
    rows = hashes.rows_many(x.indices) if x.nnz else np.zeros((m, 0), dtype=np.int64)
    dist = np.zeros(1 << nbits)
    for combo in itertools.product(*_rounding_outcomes(x, params.epsilon, params.alpha, m)):
        weight = math.prod(pr for _, pr in combo)
        z = np.zeros(nbits, dtype=np.int64)
        for entry, (y, _) in enumerate(combo):
            for b in range(y):
                z[b * s + rows[b, entry]] = 1
        agree = (patterns == z).sum(axis=1)
        dist += weight * q**agree * p ** (nbits - agree)
    return dist


def dp_ratio_oracle(mechanism: str, x: SparseVector, x_prime: SparseVector, params: AlpParams, hashes: HashFunctionSeq) -> float:
    """Largest privacy-loss ratio ``max_Z max(P[Z|x]/P[Z|x'], P[Z|x']/P[Z|x])``.

    ``mechanism`` is ``"alp1"`` (requires ``epsilon == 1``) or ``"alp"``.
    Compare the result with ``exp(epsilon * ||x - x'||_1)``.
    """
    if mechanism not in ("alp1", "alp"):
        raise ConfigurationError(f"unknown mechanism {mechanism!r}")
    if mechanism == "alp1" and params.epsilon != 1:
        raise ConfigurationError("alp1 oracle needs epsilon = 1")
    if x.d != x_prime.d:
        raise ConfigurationError("inputs must share a dimension")
    a = output_distribution(x, params, hashes)
    b = output_distribution(x_prime, params, hashes)
    return float(max(np.max(a / b), np.max(b / a)))


def l1_distance(x: SparseVector, y: SparseVector) -> float:
    idx = np.union1d(x.indices, y.indices)
    return float(sum(abs(x[int(i)] - y[int(i)]) for i in idx))
