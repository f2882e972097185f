"""Command-line entry point: ``srds run|compare|sweep|schedule``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import ConfigError, DomainError, NumericError
from .harness import RunConfig, grid, run, sweep
from .pipeline import build_task_graph, simulate_schedule
from .solvers import Discretization, SOLVER_KINDS

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


def _max_iters(text):
    if text == "auto":
        return None
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("expected an integer or 'auto'") from None
    return value


def _workers(text):
    return None if text == "unbounded" else int(text)


def _common(p, many=False):
    nargs = "+" if many else None

    def dflt(v):
        return [v] if many else v

    p.add_argument("--model", default="gaussian", help="preset name or model JSON path")
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--solver", choices=SOLVER_KINDS, default=dflt("ddim"), nargs=nargs)
    p.add_argument("--steps", type=int, default=dflt(64), nargs=nargs, help="fine steps N")
    p.add_argument("--blocks", type=int, default=None, help="coarse blocks (default: optimal)")
    p.add_argument("--tau", type=float, default=1e-3)
    p.add_argument("--max-iters", type=_max_iters, default=None, help="cap on refinements or 'auto'")
    p.add_argument("--seed", type=int, default=dflt(0), nargs=nargs)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--beta-min", type=float, default=0.1)
    p.add_argument("--beta-max", type=float, default=20.0)
    p.add_argument("--out", default=None)


def build_parser():
    parser = argparse.ArgumentParser(prog="srds", description="Parareal diffusion sampling experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one sampling mode")
    _common(p_run)
    p_run.add_argument("--mode", default="srds", choices=["sequential", "srds", "srds-pipelined", "compare"])
    p_run.add_argument("--residuals", default=None)
    p_run.add_argument("--gantt", default=None)

    p_cmp = sub.add_parser("compare", help="run all modes on the same noise draw")
    _common(p_cmp)
    p_cmp.add_argument("--residuals", default=None)
    p_cmp.add_argument("--gantt", default=None)

    p_sweep = sub.add_parser("sweep", help="grid of runs written as CSV")
    _common(p_sweep, many=True)
    p_sweep.add_argument("--mode", nargs="+", default=["compare"],
                         choices=["sequential", "srds", "srds-pipelined", "compare"])
    p_sweep.add_argument("--configs", default=None, help="JSON list of config objects (overrides grid flags)")

    p_sched = sub.add_parser("schedule", help="simulate the pipelined task graph clock")
    p_sched.add_argument("--steps", type=int, default=64)
    p_sched.add_argument("--blocks", type=int, default=None)
    p_sched.add_argument("--max-iters", type=_max_iters, default=None)
    p_sched.add_argument("--workers", type=_workers, default=None, help="integer or 'unbounded'")
    p_sched.add_argument("--gantt", default=None)
    return parser


def _config(args, **overrides) -> RunConfig:
    values = dict(
        model=args.model,
        dim=args.dim,
        solver=args.solver,
        n_fine=args.steps,
        n_blocks=args.blocks,
        tau=args.tau,
        max_iters=args.max_iters,
        seed=args.seed,
        workers=args.workers,
        beta_min=args.beta_min,
        beta_max=args.beta_max,
    )
    values.update(overrides)
    return RunConfig(**values)


def _cmd_run(args, mode):
    cfg = _config(args, mode=mode, out=args.out, residuals=args.residuals, gantt=args.gantt)
    report = run(cfg)
    if not args.out:
        print(report.to_json())
    return EXIT_OK


def _cmd_sweep(args):
    if args.configs:
        raw = json.loads(Path(args.configs).read_text())
        if not isinstance(raw, list):
            raise ConfigError("configs", "expected a JSON list of objects")
        configs = [RunConfig.from_dict(d) for d in raw]
    else:
        base = _config(args, solver=args.solver[0], n_fine=args.steps[0], seed=args.seed[0])
        configs = grid(base, n_fine=args.steps, solver=args.solver, seed=args.seed, mode=args.mode)
    table = sweep(configs)
    if args.out:
        Path(args.out).write_text(table)
    else:
        sys.stdout.write(table)
    return EXIT_OK


def _cmd_schedule(args):
    disc = Discretization(args.steps, args.blocks)
    iters = disc.n_blocks if args.max_iters is None else args.max_iters
    graph = build_task_graph(disc, iters)
    trace = simulate_schedule(graph, args.workers)
    summary = {
        "N": disc.n_fine,
        "blocks": disc.n_blocks,
        "iters": graph.max_iters,
        "workers": "unbounded" if args.workers is None else args.workers,
        "tasks": len(graph),
        "makespan": trace.makespan,
        "peak_inflight": trace.peak_inflight,
    }
    if args.gantt:
        Path(args.gantt).write_text(trace.gantt_csv(graph))
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            return _cmd_run(args, args.mode)
        if args.command == "compare":
            return _cmd_run(args, "compare")
        if args.command == "sweep":
            return _cmd_sweep(args)
        return _cmd_schedule(args)
    except (ConfigError, DomainError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, json.JSONDecodeError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
