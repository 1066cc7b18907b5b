"""``alp-bench``: experiment harness and serialization front end.

Subcommands ``sweep``, ``histogram``, ``bounds`` and ``end2end`` run
experiments and emit CSV or JSON; ``project`` and ``estimate`` build and query
serialized combined representations. Outputs depend only on the flags, so two
runs with the same flags are byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys

import numpy as np

from .. import __version__
from ..combined import CombinedRepresentation, combined_estimate_many, combined_project
from ..errors import AlpError, ConfigurationError, FormatError
from ..primitives import PrivacyBudget, RandomnessStream, SparseVector
from . import experiments
from .experiments import ExperimentConfig, SweepRecord

DEFAULT_TRIALS = {"sweep": 100_000, "histogram": 1_000_000, "end2end": 5, "bounds": 1}
MODE_NAMES = {"pure": "pure", "approx": "approximate"}


def parse_grid(text: str) -> tuple[float, ...]:
    """``start:stop:step`` (inclusive) or a comma-separated list."""
    text = text.strip()
    if ":" in text:
        try:
            start, stop, step = (float(v) for v in text.split(":"))
        except ValueError as exc:
            raise argparse.ArgumentTypeError(f"bad grid {text!r}; use start:stop:step") from exc
        if step <= 0 or stop < start:
            raise argparse.ArgumentTypeError(f"bad grid {text!r}")
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        return tuple(round(start + i * step, 10) for i in range(n))
    try:
        values = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}") from exc
    if not values:
        raise argparse.ArgumentTypeError("grid is empty")
    return values


def _clean(obj):
    """Replace non-finite floats by None so the JSON stays standard."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


def to_json(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def to_csv(header, rows, provenance: dict) -> str:
    buf = io.StringIO()
    buf.write(f"# provenance: {json.dumps(_clean(provenance), sort_keys=True)}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def emit(text: str, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
        return
    with open(out, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _grids(args) -> tuple[tuple[float, ...], tuple[float, ...]]:
    alphas = (args.alpha,) if args.alpha is not None else args.alpha_grid
    collisions = (args.collision,) if args.collision is not None else args.collision_grid
    return alphas, collisions


def make_config(args) -> ExperimentConfig:
    alphas, collisions = _grids(args)
    trials = args.trials if args.trials is not None else DEFAULT_TRIALS.get(args.command, 1)
    return ExperimentConfig(
        beta=args.beta, alpha_grid=alphas, collision_grid=collisions, epsilon=args.epsilon,
        trials=trials, seed=args.seed, workers=args.workers, bins=args.bins, noiseless=args.noiseless,
        psi=args.psi, tau=args.tau, d=args.d, u=args.u, k=args.k, s=args.s, delta=args.delta,
        mode=MODE_NAMES[args.mode],
    )


def cmd_sweep(args) -> str:
    config = make_config(args)
    records = experiments.run_alp1_sweep(config)
    provenance = config.provenance("sweep")
    if args.format == "json":
        return to_json({"provenance": provenance, "records": [r.__dict__ for r in records]})
    return to_csv(SweepRecord.FIELDS, (r.row() for r in records), provenance)


def cmd_histogram(args) -> str:
    # Fill in the default point only where no grid was given, so a multi-point
    # grid is rejected rather than silently ignored.
    if args.alpha is None and args.alpha_grid is experiments.DEFAULT_ALPHA_GRID:
        args.alpha = 3.0
    if args.collision is None and args.collision_grid is experiments.DEFAULT_COLLISION_GRID:
        args.collision = 0.1
    report = experiments.run_histogram(make_config(args))
    if args.format == "csv":
        header = ["bin_left", "bin_right", "count"] + sorted(report["overlays"])
        edges = report["bin_edges"]
        cols = [report["overlays"][name]["expected_counts"] for name in header[3:]]
        rows = ([edges[i], edges[i + 1], c] + [col[i] for col in cols] for i, c in enumerate(report["counts"]))
        provenance = {**report["provenance"], "summary": report["summary"]}
        return to_csv(header, rows, provenance)
    return to_json(report)


def cmd_bounds(args) -> str:
    config = make_config(args)
    records = experiments.run_bounds(config)
    provenance = config.provenance("bounds")
    if args.format == "csv":
        rows = (
            [r["formula_id"], r["inputs"]["alpha"], r["inputs"]["collision_ratio"], r["inputs"]["epsilon"],
             r["inputs"].get("tau", ""), r["inputs"].get("psi", ""), r["bound"]]
            for r in records
        )
        return to_csv(["formula_id", "alpha", "collision_ratio", "epsilon", "tau", "psi", "bound"], rows, provenance)
    return to_json({"provenance": provenance, "records": records})


def cmd_end2end(args) -> str:
    if args.alpha is None:
        args.alpha = 3.0
    report = experiments.run_end2end(make_config(args), timing=args.timing)
    if args.format == "csv":
        raise ConfigurationError("end2end emits JSON only")
    return to_json(report)


def read_input_vector(path: str, d: int | None, u: float | None, k: int | None) -> SparseVector:
    """Load a sparse vector from JSON ``{"d", "u", "k", "entries": {index: value}}``
    or from CSV lines ``index,value`` (then ``--d`` and ``--u`` are required)."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            doc = json.loads(text)
            entries = {int(i): float(v) for i, v in doc["entries"].items()}
            d = int(doc.get("d", d)) if doc.get("d", d) is not None else None
            u = float(doc.get("u", u)) if doc.get("u", u) is not None else None
            k = doc.get("k", k)
        except (ValueError, KeyError, TypeError, AttributeError) as exc:
            raise FormatError(f"malformed input JSON: {exc}") from exc
    else:
        entries = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                i, v = line.split(",")
                entries[int(i)] = float(v)
            except ValueError as exc:
                raise FormatError(f"malformed input line {line!r}") from exc
    if d is None or u is None:
        raise ConfigurationError("dimension d and bound u must be given")
    return SparseVector.from_mapping(d, u, entries, None if k is None else int(k))


def cmd_project(args) -> bytes:
    if args.input is None:
        raise ConfigurationError("project needs --input")
    x = read_input_vector(args.input, args.d_given, args.u_given, args.k_given)
    mode = MODE_NAMES[args.mode]
    delta = args.delta if mode == "approximate" else 0.0
    rep = combined_project(
        x, PrivacyBudget(args.epsilon, delta), RandomnessStream(args.seed),
        mode=mode, alpha=args.alpha if args.alpha is not None else 3.0, s=args.s,
    )
    return rep.to_bytes()


def parse_indices(text: str, d: int) -> np.ndarray:
    if text == "all":
        return np.arange(d)
    try:
        return np.array([int(v) for v in text.split(",") if v.strip()], dtype=np.int64)
    except ValueError as exc:
        raise ConfigurationError(f"bad index list {text!r}") from exc


def cmd_estimate(args) -> str:
    if args.rep is None or args.index is None:
        raise ConfigurationError("estimate needs --rep and --index")
    with open(args.rep, "rb") as fh:
        rep = CombinedRepresentation.from_bytes(fh.read())
    indices = parse_indices(args.index, rep.d)
    values = combined_estimate_many(rep, indices)
    provenance = {"command": "estimate", "version": __version__, "d": rep.d, "u": rep.u, "mode": rep.mode,
                  "epsilon": rep.epsilon1 + rep.epsilon2, "delta": rep.delta}
    if args.format == "json":
        return to_json({"provenance": provenance, "estimates": [{"index": int(i), "estimate": float(v)} for i, v in zip(indices, values)]})
    return to_csv(["index", "estimate"], ([int(i), float(v)] for i, v in zip(indices, values)), provenance)


COMMANDS = {
    "sweep": cmd_sweep,
    "histogram": cmd_histogram,
    "bounds": cmd_bounds,
    "end2end": cmd_end2end,
    "project": cmd_project,
    "estimate": cmd_estimate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="alp-bench", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master seed")
    common.add_argument("--out", default=None, help="output file (default: stdout)")
    common.add_argument("--format", choices=("csv", "json"), default=None)
    common.add_argument("--epsilon", type=float, default=1.0)
    common.add_argument("--alpha", type=float, default=None, help="single alpha (overrides --alpha-grid)")

    sim = argparse.ArgumentParser(add_help=False)
    sim.add_argument("--beta", type=float, default=5000.0)
    sim.add_argument("--alpha-grid", type=parse_grid, default=experiments.DEFAULT_ALPHA_GRID, help="start:stop:step or a,b,c")
    sim.add_argument("--collision", type=float, default=None, help="single collision probability")
    sim.add_argument("--collision-grid", type=parse_grid, default=experiments.DEFAULT_COLLISION_GRID)
    sim.add_argument("--trials", type=int, default=None)
    sim.add_argument("--workers", type=int, default=1)
    sim.add_argument("--noiseless", action="store_true", help="disable randomized response (rounding only)")
    sim.add_argument("--bins", type=int, default=200)
    sim.add_argument("--psi", type=float, default=None)
    sim.add_argument("--tau", type=float, default=None)

    vec = argparse.ArgumentParser(add_help=False)
    vec.add_argument("--d", type=int, default=None)
    vec.add_argument("--u", type=float, default=None)
    vec.add_argument("--k", type=int, default=None)
    vec.add_argument("--s", type=int, default=None, help="hash range (default max(2k+1, 10k))")
    vec.add_argument("--delta", type=float, default=1e-6)
    vec.add_argument("--mode", choices=tuple(MODE_NAMES), default="pure")

    sub.add_parser("sweep", parents=[common, sim, vec], help="error statistics over an (alpha, collision) grid")
    sub.add_parser("histogram", parents=[common, sim, vec], help="error histogram at one (alpha, collision) point")
    sub.add_parser("bounds", parents=[common, sim, vec], help="closed-form bounds over the grid")
    e2e = sub.add_parser("end2end", parents=[common, sim, vec], help="combined structure on synthetic input")
    e2e.add_argument("--timing", action="store_true", help="add estimator latency measurements (not reproducible)")
    proj = sub.add_parser("project", parents=[common, vec], help="serialize a private representation of a vector")
    proj.add_argument("--input", required=True, help="JSON {d,u,k,entries} or CSV index,value lines")
    est = sub.add_parser("estimate", parents=[common], help="query a serialized representation")
    est.add_argument("--rep", required=True)
    est.add_argument("--index", required=True, help="comma-separated indices or 'all'")
    return parser


def _apply_defaults(args) -> None:
    if args.format is None:
        args.format = "csv" if args.command in ("sweep", "estimate") else "json"
    if args.command in ("sweep", "histogram", "bounds", "end2end"):
        args.d_given, args.u_given, args.k_given = args.d, args.u, args.k
        args.d = 1_000_000 if args.d is None else args.d
        args.u = 10_000.0 if args.u is None else args.u
        args.k = 100 if args.k is None else args.k
    elif args.command == "project":
        args.d_given, args.u_given, args.k_given = args.d, args.u, args.k


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _apply_defaults(args)
    try:
        result = COMMANDS[args.command](args)
        if isinstance(result, bytes):
            if args.out is None or args.out == "-":
                sys.stdout.buffer.write(result)
            else:
                with open(args.out, "wb") as fh:
                    fh.write(result)
        else:
            emit(result, args.out)
    except (AlpError, ValueError, MemoryError, OSError) as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
