"""Parareal refinement of a sampling trajectory over coarse blocks.

A cheap coarse propagator ``G`` gives a first guess at every block
boundary. Each refinement runs the accurate propagator ``F`` on every block
in parallel from the previous guess, then sweeps the blocks in order and
applies the predictor-corrector update::

    x[i]^p = F(x[i-1]^(p-1)) + (G(x[i-1]^p) - G(x[i-1]^(p-1)))

The parenthesised correction vanishes exactly once a boundary has stopped
changing, so after ``p`` refinements the first ``p`` boundaries agree bit for
bit with a sequential fine solve.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DomainError, NumericError
from .solvers import (  # noqa: F401  re-exported
    Discretization,
    Propagator,
    block_cost,
    current_task,
    optimal_block_size,
    propagate,
)


@dataclass
class BlockTrajectory:
    states: list  # x_0 .. x_B at the block boundaries
    iter: int
    prev_coarse: list  # G(x_{i-1}) from the previous sweep, one per block

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


@dataclass(frozen=True)
class ConvergenceConfig:
    tau: float = 1e-3
    max_iters: int | None = None  # None -> n_blocks
    metric: str = "mean-abs"

    def __post_init__(self):
        if not self.tau > 0:
            raise DomainError("tau must be positive")
        if self.max_iters is not None and self.max_iters < 1:
            raise DomainError("max_iters must be >= 1")
        if self.metric != "mean-abs":
            raise DomainError("only the mean-abs metric is supported")

    def iteration_cap(self, disc: Discretization) -> int:
        return disc.n_blocks if self.max_iters is None else self.max_iters


@dataclass
class SolveReport:
    mode: str
    total_evals: int = 0
    eff_serial_evals: int = 0
    iters: int = 0
    residuals: list = field(default_factory=list)
    converged: bool = False
    peak_inflight: int | None = None

    def to_dict(self):
        return asdict(self)


def _run(task: str, fn, *args):
    token = current_task.set(task)
    try:
        return fn(*args)
    finally:
        current_task.reset(token)


def _fine(F, x, disc, i, steps):
    lo, hi = disc.block(i)
    return propagate(F, x, lo, hi, hi - lo if steps is None else min(steps, hi - lo))


def _coarse(G, x, disc, i, steps):
    lo, hi = disc.block(i)
    return propagate(G, x, lo, hi, hi - lo if steps is None else min(steps, hi - lo))


def _checked(x, **where):
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite state", **where)
    return x


def combine(fine, cur, prev):
    """Predictor-corrector update; the grouping keeps converged values exact."""
    return fine + (cur - prev)


def init_coarse(G: Propagator, x0, disc: Discretization, coarse_steps: int | None = 1) -> BlockTrajectory:
    x0 = np.asarray(x0, dtype=np.float64)
    _checked(x0, block=0, phase="init")
    states, prev = [x0], []
    for i in range(disc.n_blocks):
        y = _run(f"init:{i + 1}", _coarse, G, states[-1], disc, i, coarse_steps)
        _checked(y, block=i + 1, phase="init")
        prev.append(y)
        states.append(y)
    return BlockTrajectory(states, 0, prev)


def refine(
    F: Propagator,
    G: Propagator,
    traj: BlockTrajectory,
    disc: Discretization,
    *,
    fine_steps: int | None = None,
    coarse_steps: int | None = 1,
    pool: ThreadPoolExecutor | None = None,
) -> BlockTrajectory:
    """One refinement: parallel fine solves, then the sequential coarse sweep."""
    p = traj.iter + 1
    jobs = [
        (f"fine:{i + 1}:{p}", _fine, F, traj.states[i], disc, i, fine_steps)
        for i in range(disc.n_blocks)
    ]
    if pool is None:
        ys = [_run(*job) for job in jobs]
    else:
        # Results are slotted by block index, independent of completion order.
        ys = [f.result() for f in [pool.submit(_run, *job) for job in jobs]]
    for i, y in enumerate(ys):
        _checked(y, block=i + 1, iteration=p, phase="fine")

    states, prev = [traj.states[0]], list(traj.prev_coarse)
    for i in range(disc.n_blocks):
        cur = _run(f"coarse:{i + 1}:{p}", _coarse, G, states[i], disc, i, coarse_steps)
        _checked(cur, block=i + 1, iteration=p, phase="coarse")
        states.append(combine(ys[i], cur, prev[i]))
        prev[i] = cur
    return BlockTrajectory(states, p, prev)


def mean_abs_diff(a, b) -> float:
    return float(np.mean(np.abs(np.asarray(b) - np.asarray(a))))


def check_convergence(prev_final, cur_final, cfg: ConvergenceConfig) -> bool:
    return mean_abs_diff(prev_final, cur_final) < cfg.tau


def srds_sample(
    F: Propagator,
    G: Propagator,
    x0,
    disc: Discretization,
    cfg: ConvergenceConfig = ConvergenceConfig(),
    *,
    fine_steps: int | None = None,
    coarse_steps: int | None = 1,
    workers: int = 1,
):
    """Parareal sampling; returns the newest final-block state and a report.

    Effective serial evaluations count one slot per layer of concurrently
    runnable evaluations: the init sweep and every coarse sweep are serial,
    the fine solves of one refinement share the slots of the longest block.
    """
    meter = F.meter
    start_total = meter.total
    if G.meter is not meter:
        start_total += G.meter.total
    cap = cfg.iteration_cap(disc)
    f_before, g_before = F.meter.snapshot(), G.meter.snapshot()

    def fine_evals(task):
        return F.meter.for_task(task) - f_before.get(task, 0)

    def coarse_evals(task):
        return G.meter.for_task(task) - g_before.get(task, 0)

    traj = init_coarse(G, x0, disc, coarse_steps)
    eff = sum(coarse_evals(f"init:{i + 1}") for i in range(disc.n_blocks))
    report = SolveReport(mode="srds")

    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for p in range(1, cap + 1):
            new = refine(
                F, G, traj, disc, fine_steps=fine_steps, coarse_steps=coarse_steps, pool=pool
            )
            eff += max(fine_evals(f"fine:{i + 1}:{p}") for i in range(disc.n_blocks))
            eff += sum(coarse_evals(f"coarse:{i + 1}:{p}") for i in range(disc.n_blocks))
            residual = mean_abs_diff(traj.final, new.final)
            report.residuals.append(residual)
            traj = new
            if residual < cfg.tau:
                report.converged = True
                break
    finally:
        if pool is not None:
            pool.shutdown()

    total = meter.total + (0 if G.meter is meter else G.meter.total) - start_total
    report.iters = traj.iter
    report.total_evals = total
    report.eff_serial_evals = eff
    return traj.final, report


def sequential_sample(F: Propagator, x0, disc: Discretization):
    """Plain N-step solve over the fine grid."""
    before = F.meter.total
    x0 = np.asarray(x0, dtype=np.float64)
    x = _run("sequential", propagate, F, x0, 0, disc.n_fine, disc.n_fine)
    n = F.meter.total - before
    return x, SolveReport(
        mode="sequential", total_evals=n, eff_serial_evals=n, iters=0, converged=True
    )
