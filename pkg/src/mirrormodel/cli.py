"""Command-line front end: trace, estimate, sweep, cylinder-check, oracle, bench.

Exit codes: 0 all checks pass, 1 a check reported a violation, 2 usage or
configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import secrets
import sys
import time
from fractions import Fraction

import numpy as np

from . import _kernels as K
from .dynamics import Region, trace
from .environment import Environment, EnvironmentSpec, ModelKind, Topology, trial_seed
from .estimate import (
    DEFAULT_ALPHA,
    DEFAULT_ROTATING_CAP,
    InternalConsistencyError,
    cylinder_parity_check,
    escape_probability,
    exact_escape_probability,
    max_jobs,
    rows_to_csv,
    sweep,
)
from .models import Direction, RayState, initial_state, validate_model_topology

log = logging.getLogger("mirrormodel")

EXIT_OK, EXIT_VIOLATION, EXIT_USAGE = 0, 1, 2

# Flags that make up a run's config; records embed them so they can be replayed.
CONFIG_KEYS = (
    "command", "model", "p", "q", "n", "L", "trials", "seed", "heading",
    "max_steps", "topology", "circ", "alpha", "format", "repeat",
)


class UsageError(Exception):
    pass


def _csv_list(kind):
    def parse(text: str):
        return [kind(t) for t in text.split(",") if t.strip()]
    return parse


def _jobs(text: str) -> int:
    if text == "max":
        return max_jobs()
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("--jobs must be >= 1 or 'max'")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", default="mirror", choices=[m.value for m in ModelKind])
    common.add_argument("--q", default="1/2", help="P(NE | mirror); fraction or decimal")
    common.add_argument("--seed", type=int, default=None, help="seed (master seed for Monte Carlo)")
    common.add_argument("--topology", default="plane", choices=["plane", "cylinder"])
    common.add_argument("--circ", type=int, default=None, help="cylinder circumference (odd)")
    common.add_argument("--heading", default="E", choices=list("NESW"))
    common.add_argument("--max-steps", type=int, default=None)
    common.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    common.add_argument("--jobs", type=_jobs, default=max_jobs(), help="worker threads or 'max'")
    common.add_argument("--format", choices=["json", "csv"], default=None)
    common.add_argument("--output", "-o", default=None, help="output file (default stdout)")
    common.add_argument("--config", default=None, help="replay the config embedded in a JSON record")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="mirrormodel", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("trace", parents=[common], help="trace a single ray")
    p.add_argument("--p", default="0.5")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--L", type=int, default=None, help="strip half-length on a cylinder")
    p.add_argument("--dump-path", action="store_true")

    p = sub.add_parser("estimate", parents=[common], help="Monte Carlo escape probability")
    p.add_argument("--p", default="0.5")
    p.add_argument("--n", type=int, default=5)
    p.add_argument("--L", type=int, default=None)
    p.add_argument("--trials", type=int, default=100_000)

    p = sub.add_parser("sweep", parents=[common], help="estimate over a (model, p, n) grid",
                       description="All cells share the master seed, so trial i sees the same per-vertex "
                                   "randomness in every cell.")
    p.add_argument("--models", type=_csv_list(str), default=None, help="comma list; defaults to --model")
    p.add_argument("--p", type=_csv_list(float), default=[0.1, 0.3, 0.5, 0.7, 0.9, 1.0])
    p.add_argument("--n", type=_csv_list(int), default=[1, 2, 5, 10, 25])
    p.add_argument("--trials", type=int, default=100_000)

    p = sub.add_parser("cylinder-check", parents=[common], help="parity check on Z x S_(2n+1)")
    p.add_argument("--p", default="0.5")
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--L", type=int, default=200)
    p.add_argument("--repeat", type=int, default=1, help="number of seeds derived from --seed")

    p = sub.add_parser("oracle", parents=[common], help="exact escape probability by enumeration")
    p.add_argument("--p", default="1/2")
    p.add_argument("--n", type=int, default=1)

    p = sub.add_parser("bench", parents=[common], help="stepping throughput")
    p.add_argument("--p", default="0.5")
    p.add_argument("--steps", type=int, default=20_000_000)
    return parser


def _apply_config(args: argparse.Namespace, argv: list[str]) -> None:
    with open(args.config) as fh:
        record = json.load(fh)
    config = record.get("config", record)
    if config.get("command") not in (None, args.command):
        raise UsageError(f"config is for command {config['command']!r}, not {args.command!r}")
    explicit = {a.split("=")[0].lstrip("-").replace("-", "_") for a in argv if a.startswith("--")}
    for key, value in config.items():
        if key == "command" or key in explicit or not hasattr(args, key):
            continue
        setattr(args, key, value)


def _topology(args) -> Topology:
    if args.topology == "plane":
        if args.circ is not None:
            raise UsageError("--circ only applies to --topology cylinder")
        return Topology.plane()
    circ = args.circ
    if circ is None:
        n = args.n if isinstance(args.n, int) else None
        if n is None:
            raise UsageError("--topology cylinder needs --circ")
        circ = 2 * n + 1
    try:
        return Topology.cylinder(circ)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _seed(args) -> int:
    if args.seed is None:
        args.seed = secrets.randbits(64)
        print(f"seed: {args.seed}", file=sys.stderr)
    return args.seed


def _config(args) -> dict:
    return {k: getattr(args, k) for k in CONFIG_KEYS if hasattr(args, k)}


def _spec(args, p=None) -> EnvironmentSpec:
    topo = _topology(args)
    try:
        spec = EnvironmentSpec(
            ModelKind(args.model),
            float(Fraction(args.p if p is None else p)),
            float(Fraction(args.q)),
            _seed(args),
            topo,
        )
        validate_model_topology(spec.model, topo)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return spec


def _emit(args, text: str) -> None:
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _emit_json(args, obj) -> None:
    _emit(args, json.dumps(obj, indent=2, sort_keys=False) + "\n")


def cmd_trace(args) -> int:
    spec = _spec(args)
    env = Environment(spec)
    start = initial_state(env, Direction[args.heading])
    if spec.topology.is_cylinder:
        region = Region.strip(args.n if args.L is None else args.L)
    else:
        region = Region.box(args.n)
    if args.max_steps is not None:
        cap = args.max_steps
    elif spec.model is ModelKind.ROTATING:
        cap = DEFAULT_ROTATING_CAP
    else:
        cap = region.state_count(spec.topology.circumference) + 1
    out = trace(env, start, region, cap, dump_path=args.dump_path)
    record = out.to_dict()
    record["start"] = [start.pos[0], start.pos[1], start.heading.name]
    record["spec"] = spec.to_dict()
    record["config"] = _config(args)
    _emit_json(args, record)
    return EXIT_OK


def cmd_estimate(args) -> int:
    spec = _spec(args)
    if args.trials < 1 or args.n < 0:
        raise UsageError("need --trials >= 1 and --n >= 0")
    est = escape_probability(
        spec, args.n, args.trials, args.seed, alpha=args.alpha,
        heading=int(Direction[args.heading]), L=args.L, max_steps=args.max_steps, jobs=args.jobs,
    )
    if args.format == "csv":
        _emit(args, rows_to_csv([est]))
    else:
        record = est.to_dict()
        record["config"] = _config(args)
        _emit_json(args, record)
    return EXIT_VIOLATION if est.verdict == "violation" else EXIT_OK


def cmd_sweep(args) -> int:
    models = args.models or [args.model]
    topo = _topology(args)
    seed = _seed(args)
    try:
        q = float(Fraction(args.q))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    grid = [(m, p, n) for m in models for p in args.p for n in args.n]
    rows = sweep(grid, args.trials, seed, q=q, topology=topo, alpha=args.alpha,
                 jobs=args.jobs, max_steps=args.max_steps)
    if args.format == "json":
        records = [r.estimate.to_dict() if r.estimate else {**r.row(), "error": r.error} for r in rows]
        _emit_json(args, {"config": _config(args), "rows": records})
    else:
        _emit(args, rows_to_csv(rows))
    verdicts = {r.verdict for r in rows}
    if "violation" in verdicts:
        return EXIT_VIOLATION
    if "rejected" in verdicts:
        return EXIT_USAGE
    return EXIT_OK


def cmd_cylinder_check(args) -> int:
    if args.topology == "plane" and args.circ is None:
        args.topology = "cylinder"
    spec = _spec(args)
    if args.repeat < 1:
        raise UsageError("--repeat must be >= 1")
    try:
        reports = []
        for i in range(args.repeat):
            seed = spec.seed if i == 0 else trial_seed(spec.seed, i)
            reports.append((seed, cylinder_parity_check(spec.with_seed(seed), args.L, args.max_steps)))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if args.repeat == 1:
        record = reports[0][1].to_dict()
    else:
        record = {
            "configurations": args.repeat,
            "failures": [{"seed": s, **r.to_dict()} for s, r in reports if not r.ok],
            "min_escaped_count": min(r.escaped_count for _, r in reports),
        }
    record["config"] = _config(args)
    _emit_json(args, record)
    return EXIT_OK if all(r.ok for _, r in reports) else EXIT_VIOLATION


def cmd_oracle(args) -> int:
    try:
        res = exact_escape_probability(args.model, args.n, Fraction(args.p), Fraction(args.q),
                                       heading=int(Direction[args.heading]))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    record = res.to_dict()
    record["config"] = _config(args)
    _emit_json(args, record)
    return EXIT_OK if record["meets_bound"] else EXIT_VIOLATION


def run_bench(p: float, steps: int, seed: int) -> dict:
    """Throughput of a long free flight and of repeated trials at density ``p``."""
    dummy = np.zeros((1, 1), dtype=np.uint8)
    K.trace_kernel(0, 0.0, 0.5, 1, 0, 0, 0, 1, False, 1 << 40, 10, dummy, 0, 0)  # compile
    K.escape_count_kernel(0, p, 0.5, seed, 0, 4, 1, 0, 2, 1000)

    t0 = time.perf_counter()
    _, free_steps, *_ = K.trace_kernel(0, 0.0, 0.5, seed, 0, 0, 0, 1, False, 1 << 40, steps, dummy, 0, 0)
    free_time = time.perf_counter() - t0

    n = 64
    cap = 4 * (2 * n + 1) ** 2 + 1
    done, first, chunk = 0, 0, 4096
    t0 = time.perf_counter()
    while done < steps:
        _, _, s = K.escape_count_kernel(0, p, 0.5, seed, 0, n, 1, first, first + chunk, cap)
        done += int(s)
        first += chunk
    dense_time = time.perf_counter() - t0
    free_rate = int(free_steps) / free_time
    dense_rate = done / dense_time
    return {
        "free_flight": {"p": 0.0, "steps": int(free_steps), "seconds": free_time, "steps_per_second": free_rate},
        "dense": {"p": p, "n": n, "trials": first, "steps": done, "seconds": dense_time,
                  "steps_per_second": dense_rate},
        "ratio_free_over_dense": free_rate / dense_rate if dense_rate else float("inf"),
    }


def cmd_bench(args) -> int:
    seed = _seed(args)
    record = run_bench(float(Fraction(args.p)), args.steps, seed)
    record["config"] = {**_config(args), "steps": args.steps}
    _emit_json(args, record)
    return EXIT_OK


COMMANDS = {
    "trace": cmd_trace,
    "estimate": cmd_estimate,
    "sweep": cmd_sweep,
    "cylinder-check": cmd_cylinder_check,
    "oracle": cmd_oracle,
    "bench": cmd_bench,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.config:
            _apply_config(args, argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InternalConsistencyError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_VIOLATION
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
