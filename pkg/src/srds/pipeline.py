"""Pipelined Parareal sampling on a dependency graph.

Both the fine and the coarse solve of block ``i`` in refinement ``p`` need
only the boundary value ``x[i-1]``, so they can start as soon as it exists
instead of waiting for a whole sweep to finish. The graph built here
covers exactly that data flow. Boundaries that have already converged
(``x[i]^p`` for ``i < p``) never change again, so no tasks are created for
them and their values are reused as-is.

Time is measured in model evaluations: a fine task costs the evaluations of
its block, a coarse task the evaluations of one coarse step, and combines
are free. ``simulate_schedule`` turns a graph into start/end slots, and
``pipelined_run`` executes the graph on a worker pool in the order those
slots dictate. That keeps counters independent of thread timing.
"""

from __future__ import annotations

import csv
import heapq
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from graphlib import TopologicalSorter

import numpy as np

from .errors import DomainError, NumericError
from .parareal import ConvergenceConfig, SolveReport, _run, combine, mean_abs_diff
from .solvers import Discretization, Propagator, propagate

KINDS = ("source", "init", "fine", "coarse", "combine")
GANTT_COLUMNS = ["task_id", "kind", "block", "iter", "start", "end"]


@dataclass
class TaskNode:
    id: str
    kind: str
    block: int
    iter: int
    deps: list = field(default_factory=list)
    cost: int = 0
    start: int | None = None
    end: int | None = None


@dataclass
class TaskGraph:
    disc: Discretization
    max_iters: int
    nodes: dict = field(default_factory=dict)  # id -> TaskNode, in topological order

    def add(self, node: TaskNode):
        self.nodes[node.id] = node

    def __len__(self):
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes.values())

    def __getitem__(self, key):
        return self.nodes[key]

    def of_kind(self, kind):
        return [n for n in self if n.kind == kind]

    def value_producer(self, i: int, p: int) -> str:
        """Id of the task whose output is ``x[i]^p``."""
        if i == 0:
            return "source"
        if p == 0:
            return f"init:{i}"
        return f"combine:{i}:{min(i, p)}"

    def coarse_producer(self, i: int, p: int) -> str:
        """Id of the task whose output is ``G(x[i-1]^p)`` over block ``i``."""
        if p == 0:
            return f"init:{i}"
        if i >= p + 1:
            return f"coarse:{i}:{p}"
        # x[i-1] is frozen from refinement i-1 on, so reuse that coarse value.
        return self.coarse_producer(i, i - 1)

    def topological_order(self) -> list:
        ts = TopologicalSorter({n.id: n.deps for n in self})
        return list(ts.static_order())


def build_task_graph(
    disc: Discretization,
    max_iters: int,
    *,
    fine_evals_per_step: int = 1,
    fine_steps: int | None = None,
    coarse_evals_per_step: int = 1,
    coarse_steps: int | None = 1,
) -> TaskGraph:
    """Dependency graph of a pipelined run capped at ``max_iters`` refinements.

    Blocks are 1-based. Refinement ``p`` holds fine tasks for blocks
    ``i >= p``, coarse tasks for ``i >= p + 1`` and one combine per ``i >= p``.
    """
    if max_iters < 1:
        raise DomainError("max_iters must be >= 1")
    max_iters = min(max_iters, disc.n_blocks)

    def steps(i, override):
        span = disc.steps_in_block(i - 1)
        return span if override is None else min(override, span)

    g = TaskGraph(disc, max_iters)
    g.add(TaskNode("source", "source", 0, 0))
    for i in range(1, disc.n_blocks + 1):
        g.add(
            TaskNode(
                f"init:{i}", "init", i, 0, [g.value_producer(i - 1, 0)],
                steps(i, coarse_steps) * coarse_evals_per_step,
            )
        )
    for p in range(1, max_iters + 1):
        for i in range(p, disc.n_blocks + 1):
            g.add(
                TaskNode(
                    f"fine:{i}:{p}", "fine", i, p, [g.value_producer(i - 1, p - 1)],
                    steps(i, fine_steps) * fine_evals_per_step,
                )
            )
            if i >= p + 1:
                g.add(
                    TaskNode(
                        f"coarse:{i}:{p}", "coarse", i, p, [g.value_producer(i - 1, p)],
                        steps(i, coarse_steps) * coarse_evals_per_step,
                    )
                )
            deps = [f"fine:{i}:{p}", g.coarse_producer(i, p), g.coarse_producer(i, p - 1)]
            g.add(TaskNode(f"combine:{i}:{p}", "combine", i, p, list(dict.fromkeys(deps))))
    return g


@dataclass
class ClockTrace:
    times: dict  # id -> (start, end)
    makespan: int
    peak_inflight: int

    def gantt_rows(self, graph: TaskGraph):
        for node_id, (start, end) in sorted(self.times.items(), key=lambda kv: (kv[1], kv[0])):
            n = graph[node_id]
            yield [n.id, n.kind, n.block, n.iter, start, end]

    def gantt_csv(self, graph: TaskGraph) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(GANTT_COLUMNS)
        w.writerows(self.gantt_rows(graph))
        return buf.getvalue()


def peak_inflight(intervals) -> int:
    """Maximum number of half-open ``[start, end)`` intervals covering one slot."""
    events = []
    for start, end in intervals:
        if end > start:
            events.append((start, 1))
            events.append((end, -1))
    # Ends sort before starts at equal times.
    events.sort()
    peak = cur = 0
    for _, delta in events:
        cur += delta
        peak = max(peak, cur)
    return peak


def _priority(node: TaskNode):
    return (node.iter, node.block, KINDS.index(node.kind), node.id)


def simulate_schedule(graph: TaskGraph, workers: int | None = None) -> ClockTrace:
    """Non-preemptive list scheduling under unit evaluation cost.

    ``workers=None`` means unbounded: every task starts the moment its last
    dependency ends. With a finite pool, ready tasks are started in
    (iteration, block) order; zero-cost tasks never occupy a worker.
    """
    if workers is not None and workers < 1:
        raise DomainError("workers must be >= 1")
    order = graph.topological_order()
    times = {}
    if workers is None:
        for node_id in order:
            n = graph[node_id]
            start = max((times[d][1] for d in n.deps), default=0)
            times[node_id] = (start, start + n.cost)
    else:
        times = _simulate_bounded(graph, workers)
    for node_id, (start, end) in times.items():
        graph[node_id].start, graph[node_id].end = start, end
    makespan = max(end for _, end in times.values())
    peak = peak_inflight(times[n.id] for n in graph if n.cost > 0)
    return ClockTrace(times, makespan, peak)


def _simulate_bounded(graph: TaskGraph, workers: int) -> dict:
    children = {n.id: [] for n in graph}
    waiting = {}
    for n in graph:
        waiting[n.id] = len(n.deps)
        for d in n.deps:
            children[d].append(n.id)

    times, ready, running = {}, [], []
    for n in graph:
        if not n.deps:
            heapq.heappush(ready, (_priority(n), n.id))
    t = 0
    while ready or running:
        progressed = True
        while progressed:
            progressed = False
            held = []
            while ready:
                prio, node_id = heapq.heappop(ready)
                n = graph[node_id]
                if n.cost == 0:
                    times[node_id] = (t, t)
                    for c in children[node_id]:
                        waiting[c] -= 1
                        if waiting[c] == 0:
                            heapq.heappush(ready, (_priority(graph[c]), c))
                    progressed = True
                elif len(running) < workers:
                    times[node_id] = (t, t + n.cost)
                    heapq.heappush(running, (t + n.cost, node_id))
                else:
                    held.append((prio, node_id))
            for item in held:
                heapq.heappush(ready, item)
        if not running:
            break
        t = running[0][0]
        while running and running[0][0] == t:
            _, node_id = heapq.heappop(running)
            for c in children[node_id]:
                waiting[c] -= 1
                if waiting[c] == 0:
                    heapq.heappush(ready, (_priority(graph[c]), c))
    return times


@dataclass
class PipelineResult:
    x: np.ndarray
    report: SolveReport
    graph: TaskGraph
    trace: ClockTrace  # executed tasks only, unbounded-worker clock


def pipelined_run(
    F: Propagator,
    G: Propagator,
    x0,
    disc: Discretization,
    cfg: ConvergenceConfig = ConvergenceConfig(),
    *,
    workers: int | None = None,
    fine_steps: int | None = None,
    coarse_steps: int | None = 1,
) -> PipelineResult:
    """Execute the pipelined graph on a thread pool of ``workers`` (default ``n_blocks``).

    The coordinator walks the simulated clock: at every slot it collects the
    tasks ending there, applies the combines due, checks convergence, then
    submits the tasks starting there. Once converged, nothing further is
    submitted; tasks already running finish and count toward total evals.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    if not np.all(np.isfinite(x0)):
        raise NumericError("non-finite initial state", block=0, phase="init")
    graph = build_task_graph(
        disc,
        cfg.iteration_cap(disc),
        fine_evals_per_step=F.evals_per_step,
        fine_steps=fine_steps,
        coarse_evals_per_step=G.evals_per_step,
        coarse_steps=coarse_steps,
    )
    cap = graph.max_iters
    clock = simulate_schedule(graph)
    last = disc.n_blocks

    starts, ends = {}, {}
    for n in graph:
        if n.kind == "source":
            continue
        starts.setdefault(n.start, []).append(n)
        if n.cost > 0:
            ends.setdefault(n.end, []).append(n)
    slots = sorted(set(starts) | set(ends))

    meters = {id(F.meter): F.meter, id(G.meter): G.meter}
    before = sum(m.total for m in meters.values())
    values = {"source": x0}
    inflight, executed = {}, {}
    report = SolveReport(mode="srds-pipelined")
    final, stop_at = None, None

    def task_fn(n: TaskNode):
        lo, hi = disc.block(n.block - 1)
        if n.kind == "fine":
            src, prop, k = graph.value_producer(n.block - 1, n.iter - 1), F, fine_steps
        else:
            src = graph.value_producer(n.block - 1, n.iter)
            prop, k = G, coarse_steps
        return _run(n.id, propagate, prop, values[src], lo, hi, hi - lo if k is None else min(k, hi - lo))

    def collect(n: TaskNode):
        y = inflight.pop(n.id).result()
        if not np.all(np.isfinite(y)):
            raise NumericError("non-finite state", block=n.block, iteration=n.iter, phase=n.kind)
        values[n.id] = y

    pool = ThreadPoolExecutor(max_workers=workers or disc.n_blocks)
    try:
        for t in slots:
            for n in ends.get(t, []):
                if n.id in inflight:
                    collect(n)
            due = sorted(starts.get(t, []), key=_priority)
            for n in (n for n in due if n.kind == "combine"):
                values[n.id] = combine(
                    values[f"fine:{n.block}:{n.iter}"],
                    values[graph.coarse_producer(n.block, n.iter)],
                    values[graph.coarse_producer(n.block, n.iter - 1)],
                )
                executed[n.id] = (t, t)
                if n.block == last:
                    prev = values[graph.value_producer(last, n.iter - 1)]
                    residual = mean_abs_diff(prev, values[n.id])
                    report.residuals.append(residual)
                    final, report.iters = values[n.id], n.iter
                    if residual < cfg.tau:
                        report.converged = True
                    if report.converged or n.iter == cap:
                        stop_at = t
                        break
            if stop_at is not None:
                break
            for n in (n for n in due if n.cost > 0):
                inflight[n.id] = pool.submit(task_fn, n)
                executed[n.id] = (n.start, n.end)
        # Speculative tasks already started run to completion.
        for node_id in list(inflight):
            collect(graph[node_id])
    finally:
        pool.shutdown(cancel_futures=True)

    report.total_evals = sum(m.total for m in meters.values()) - before
    report.eff_serial_evals = stop_at
    trace = ClockTrace(
        executed,
        stop_at,
        peak_inflight(executed[k] for k in executed if graph[k].cost > 0),
    )
    report.peak_inflight = trace.peak_inflight
    return PipelineResult(final, report, graph, trace)


def pipelined_srds_sample(F, G, x0, disc, cfg=ConvergenceConfig(), **kwargs):
    res = pipelined_run(F, G, x0, disc, cfg, **kwargs)
    return res.x, res.report
