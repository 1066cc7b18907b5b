"""Experiment runners behind the ``alp-bench`` command line.

Each runner takes an :class:`ExperimentConfig` and returns plain Python data
(lists of records or dicts) that the CLI serializes as CSV or JSON.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from .. import __version__
from ..alp_core import AlpParams, Embedding, alp_estimate
from ..analysis import BoundQuery, error_quantile_bound, expected_error_bound, tail_probability_bound
from ..combined import combined_estimate_many, combined_project, default_hash_range, threshold_params_for
from ..errors import ConfigurationError
from ..primitives import HashFunctionSeq, PrivacyBudget, RandomnessStream, SparseVector
from .simulate import simulate_alp1

DEFAULT_ALPHA_GRID = tuple(round(0.1 * i, 10) for i in range(1, 101))
DEFAULT_COLLISION_GRID = (0.0, 0.05, 0.1, 0.15, 0.2)

# Stream key separating end-to-end trials from other uses of the same seed.
_END2END_STREAM = 7


@dataclass
class ExperimentConfig:
    beta: float = 5000.0
    alpha_grid: tuple[float, ...] = DEFAULT_ALPHA_GRID
    collision_grid: tuple[float, ...] = DEFAULT_COLLISION_GRID
    epsilon: float = 1.0
    trials: int = 100_000
    seed: int = 0
    workers: int = 1
    bins: int = 200
    noiseless: bool = False
    psi: float | None = None
    tau: float | None = None
    # End-to-end parameters.
    d: int = 1_000_000
    u: float = 10_000.0
    k: int = 100
    s: int | None = None
    delta: float = 1e-6
    mode: str = "pure"

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigurationError("trials must be at least 1")
        if not self.alpha_grid or not self.collision_grid:
            raise ConfigurationError("parameter grids must be non-empty")
        self.alpha_grid = tuple(float(a) for a in self.alpha_grid)
        self.collision_grid = tuple(float(c) for c in self.collision_grid)

    def provenance(self, command: str) -> dict:
        # Worker count is left out: it never changes results, and outputs
        # must not differ between runs that only differ in parallelism.
        config = asdict(self)
        del config["workers"]
        return {"command": command, "version": __version__, "seed": self.seed, "config": config}


@dataclass
class SweepRecord:
    alpha: float
    collision: float
    mean_abs_error: float
    signed_mean_error: float
    std: float
    p50: float
    p90: float
    p99: float
    bound: float
    trials: int

    FIELDS = ("alpha", "collision", "mean_abs_error", "signed_mean_error", "std", "p50", "p90", "p99", "bound", "trials")

    def row(self) -> list:
        return [getattr(self, f) for f in self.FIELDS]


def summarize(batch, bound: float) -> SweepRecord:
    err = batch.error
    absolute = np.abs(err)
    p50, p90, p99 = np.quantile(absolute, [0.5, 0.9, 0.99])
    return SweepRecord(
        alpha=batch.alpha,
        collision=batch.collision,
        mean_abs_error=float(absolute.mean()),
        signed_mean_error=float(err.mean()),
        std=float(err.std()),
        p50=float(p50),
        p90=float(p90),
        p99=float(p99),
        bound=bound,
        trials=len(err),
    )


def _bound_or_nan(alpha: float, collision: float, epsilon: float) -> float:
    try:
        return expected_error_bound(alpha, collision, epsilon)
    except Exception:
        # gamma <= 0 (collision >= 1/2 or too large for this alpha): no bound.
        return math.nan


def run_alp1_sweep(config: ExperimentConfig) -> list[SweepRecord]:
    records = []
    for alpha in config.alpha_grid:
        for collision in config.collision_grid:
            batch = simulate_alp1(
                alpha, collision, beta=config.beta, epsilon=config.epsilon, trials=config.trials,
                seed=config.seed, noiseless=config.noiseless, workers=config.workers,
            )
            records.append(summarize(batch, _bound_or_nan(alpha, collision, config.epsilon)))
    return records


def laplace_density(v: np.ndarray, scale: float) -> np.ndarray:
    return np.exp(-np.abs(v) / scale) / (2.0 * scale)


def run_histogram(config: ExperimentConfig) -> dict:
    """Binned signed-error distribution at a single ``(alpha, collision)`` point."""
    if len(config.alpha_grid) != 1 or len(config.collision_grid) != 1:
        raise ConfigurationError("histogram runs at exactly one alpha and one collision probability")
    alpha, collision = config.alpha_grid[0], config.collision_grid[0]
    batch = simulate_alp1(
        alpha, collision, beta=config.beta, epsilon=config.epsilon, trials=config.trials,
        seed=config.seed, noiseless=config.noiseless, workers=config.workers,
    )
    err = batch.error
    lo, hi = float(err.min()), float(err.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    counts, edges = np.histogram(err, bins=config.bins, range=(lo, hi))
    centers = 0.5 * (edges[:-1] + edges[1:])
    width = edges[1] - edges[0]
    overlays = {}
    for scale in (1.0 / config.epsilon, 4.5 / config.epsilon):
        overlays[f"laplace_{scale:g}"] = {
            "scale": scale,
            "std": math.sqrt(2.0) * scale,
            "expected_counts": (laplace_density(centers, scale) * len(err) * width).tolist(),
        }
    record = summarize(batch, _bound_or_nan(alpha, collision, config.epsilon))
    return {
        "provenance": config.provenance("histogram"),
        "summary": {**asdict(record), "min_error": lo, "max_error": hi},
        "bin_edges": edges.tolist(),
        "counts": counts.tolist(),
        "overlays": overlays,
    }


def run_bounds(config: ExperimentConfig) -> list[dict]:
    """Closed-form bounds over the sweep grid as ``{inputs, bound, formula_id}`` records."""
    records = []
    for alpha in config.alpha_grid:
        for collision in config.collision_grid:
            inputs = {"alpha": alpha, "collision_ratio": collision, "epsilon": config.epsilon}
            records.append({"inputs": inputs, "bound": _bound_or_nan(alpha, collision, config.epsilon), "formula_id": "expected_error"})
            try:
                query = BoundQuery(alpha, collision, config.epsilon, tau=config.tau, psi=config.psi)
            except Exception:
                continue
            if config.tau is not None:
                records.append({"inputs": {**inputs, "tau": config.tau}, "bound": tail_probability_bound(query), "formula_id": "tail_probability"})
            if config.psi is not None:
                records.append({"inputs": {**inputs, "psi": config.psi}, "bound": error_quantile_bound(query), "formula_id": "error_quantile"})
    return records


def synthetic_input(d: int, u: float, k: int, t: float, rng: RandomnessStream) -> tuple[SparseVector, dict[str, int]]:
    """Random k-sparse vector with probe entries at ``t/2, t, 2t, u`` and a zero probe.

    Returns the vector and ``{probe name: index}``.
    """
    g = rng.generator
    picks = g.choice(d, size=k + 1, replace=False)
    zero_index, support = int(picks[0]), picks[1:]
    values = g.uniform(0.0, u, size=k)
    values[values == 0] = u
    probes = {"0": zero_index}
    slot = 0
    for name, v in (("t/2", t / 2), ("t", t), ("2t", 2 * t), ("u", u)):
        if 0 < v <= u and slot < k:
            values[slot] = v
            probes[name] = int(support[slot])
            slot += 1
    order = np.argsort(support)
    return SparseVector(d, u, k, support[order], values[order]), probes


def estimator_latency(ms, *, alpha: float = 1.0, s: int = 64, repeats: int = 25, seed: int = 0) -> dict:
    """Time :func:`alp_estimate` on embeddings with the given column counts.

    Returns per-``m`` best-of-``repeats`` seconds and an affine least-squares fit.
    """
    rng = RandomnessStream(seed, (_END2END_STREAM, 1))
    times = []
    for m in ms:
        params = AlpParams(alpha, m * alpha, s)
        hashes = HashFunctionSeq.random(1024, s, params.m, rng)
        bits = rng.generator.integers(0, 256, size=(params.m, (s + 7) // 8), dtype=np.uint8)
        emb = Embedding(params, hashes, bits, 1024, m * alpha, 1)
        best = math.inf
        for r in range(repeats):
            start = time.perf_counter()
            alp_estimate(emb, r % 1024)
            best = min(best, time.perf_counter() - start)
        times.append(best)
    ms_arr, t_arr = np.asarray(ms, dtype=float), np.asarray(times)
    slope, intercept = np.polyfit(ms_arr, t_arr, 1)
    residual = t_arr - (slope * ms_arr + intercept)
    r2 = 1.0 - residual.var() / t_arr.var()
    return {"m": list(map(int, ms)), "seconds": times, "slope": float(slope), "intercept": float(intercept), "r_squared": float(r2)}


def run_end2end(config: ExperimentConfig, *, timing: bool = False) -> dict:
    """Build combined representations on synthetic inputs and measure size and error."""
    mode = "approximate" if config.mode in ("approx", "approximate") else config.mode
    delta = config.delta if mode == "approximate" else 0.0
    alpha = config.alpha_grid[0]
    budget = PrivacyBudget(config.epsilon, delta)
    eps1 = config.epsilon / 2.0
    t = threshold_params_for(mode, config.d, eps1, delta).t
    s = config.s if config.s is not None else default_hash_range(config.k)

    sizes, max_errors = [], []
    probe_errors: dict[str, list[float]] = {}
    m = None
    for trial in range(config.trials):
        rng = RandomnessStream(config.seed, (_END2END_STREAM, 0, trial))
        x, probes = synthetic_input(config.d, config.u, config.k, t, rng.child(0))
        rep = combined_project(x, budget, rng.child(1), mode=mode, alpha=alpha, s=s)
        m = rep.embedding.params.m
        sizes.append(8 * len(rep.to_bytes()))
        names = list(probes)
        estimates = combined_estimate_many(rep, [probes[n] for n in names])
        for name, est in zip(names, estimates):
            probe_errors.setdefault(name, []).append(abs(float(est) - x[probes[name]]))
        if config.d <= 2_000_000:
            full = combined_estimate_many(rep, np.arange(config.d))
            max_errors.append(float(np.max(np.abs(full - x.to_dense()))))

    report = {
        "provenance": config.provenance("end2end"),
        "mode": mode,
        "threshold": t,
        "epsilon_split": [eps1, config.epsilon - eps1],
        "delta": delta,
        "s": s,
        "m": m,
        "embedding_bits": s * m,
        "size_bits": {"mean": float(np.mean(sizes)), "min": int(min(sizes)), "max": int(max(sizes))},
        "size_per_k_log_d_u": float(np.mean(sizes)) / (config.k * math.log2(config.d + config.u)),
        "probe_mean_abs_error": {n: float(np.mean(v)) for n, v in probe_errors.items()},
    }
    if max_errors:
        report["max_error"] = {"mean": float(np.mean(max_errors)), "per_log_d": float(np.mean(max_errors)) * config.epsilon / math.log(config.d)}
    if timing:
        report["timing"] = estimator_latency([2 ** j for j in range(10, 17)], seed=config.seed)
    return report
