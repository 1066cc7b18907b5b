"""Worst-case-collision simulation of ALP1 estimation.

Instead of building embeddings, each trial simulates the ``m`` bits read for
one entry: leading bits are ones, trailing bits are ones only when they
collide with another entry (probability ``collision``, as if every other entry
were at least ``beta``), and every bit then goes through randomized response.

Trials are split into fixed-size chunks, each seeded from
``(seed, point key, chunk number)``; results are identical for any number of
worker threads.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .. import _kernels
from ..alp_core import _ceil_ratio
from ..errors import DomainError
from ..primitives import RandomnessStream

CHUNK = 1 << 16


@dataclass
class TrialBatch:
    alpha: float
    collision: float
    beta: float
    epsilon: float
    x: np.ndarray
    y: np.ndarray
    y_estimate: np.ndarray
    estimate: np.ndarray

    @property
    def error(self) -> np.ndarray:
        """Signed error ``estimate - x``; positive means overestimate."""
        return self.estimate - self.x

    @property
    def rounded_error(self) -> np.ndarray:
        """``|y - y~|`` in rounded units."""
        return np.abs(self.y - self.y_estimate)


def _float_key(v: float) -> int:
    return struct.unpack("<Q", struct.pack("<d", float(v)))[0]


def point_stream(seed: int, alpha: float, collision: float, beta: float, epsilon: float, noiseless: bool) -> RandomnessStream:
    key = tuple(_float_key(v) for v in (alpha, collision, beta, epsilon)) + (int(noiseless),)
    return RandomnessStream(seed, key)


def simulate_alp1(
    alpha: float,
    collision: float,
    *,
    beta: float = 5000.0,
    epsilon: float = 1.0,
    trials: int = 100_000,
    seed: int = 0,
    noiseless: bool = False,
    workers: int = 1,
) -> TrialBatch:
    if not alpha > 0 or not beta > 0 or not epsilon > 0:
        raise DomainError("alpha, beta and epsilon must be positive")
    if not 0 <= collision <= 1:
        raise DomainError(f"collision probability must lie in [0, 1], got {collision}")
    if trials < 1:
        raise DomainError("need at least one trial")
    m = _ceil_ratio(beta * epsilon, alpha)
    p = 0.0 if noiseless else 1.0 / (alpha + 2.0)
    q = 1.0 - p
    # Noiseless mode isolates the rounding error: no flips and no collisions.
    p_tail = 0.0 if noiseless else collision * q + (1.0 - collision) * p

    xs = np.empty(trials)
    ys = np.empty(trials, dtype=np.int64)
    sums = np.empty(trials, dtype=np.int64)
    counts = np.empty(trials, dtype=np.int64)
    stream = point_stream(seed, alpha, collision, beta, epsilon, noiseless)

    def run(chunk: int) -> None:
        lo, hi = chunk * CHUNK, min(trials, (chunk + 1) * CHUNK)
        _kernels.alp1_trials(
            stream.child(chunk).uint32_seed(), beta, epsilon / alpha, m, p, p_tail,
            xs[lo:hi], ys[lo:hi], sums[lo:hi], counts[lo:hi],
        )

    chunks = range((trials + CHUNK - 1) // CHUNK)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, chunks))
    else:
        for c in chunks:
            run(c)

    y_est = sums / counts
    estimate = np.clip(y_est * (alpha / epsilon), 0.0, beta)
    return TrialBatch(alpha, collision, beta, epsilon, xs, ys.astype(np.float64), y_est, estimate)
