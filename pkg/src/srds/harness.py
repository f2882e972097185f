"""Run configuration, seeded noise, experiment orchestration and reports.

Noise draws use the Philox4x64-10 counter-based generator keyed by
``(seed, crc32(purpose) << 32 | index)`` and the Box-Muller transform on
pairs of 53-bit uniforms, so a draw depends only on its seed and purpose,
never on execution order.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import time
import zlib
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .models import NoiseSchedule, resolve_model
from .parareal import ConvergenceConfig, optimal_block_size, sequential_sample, srds_sample
from .pipeline import pipelined_run
from .solvers import SOLVER_KINDS, Discretization, EvalMeter, Propagator

log = logging.getLogger(__name__)

SCHEMA = "srds-report/1"
MODES = ("sequential", "srds", "srds-pipelined", "compare")
SWEEP_COLUMNS = [
    "mode", "N", "blocks", "solver", "iters", "converged",
    "eff_serial_evals", "total_evals", "final_residual", "checksum", "error",
]
_U64 = (1 << 64) - 1


def _generator(seed: int, purpose: str, index: int = 0) -> np.random.Generator:
    key = [seed & _U64, ((zlib.crc32(purpose.encode()) << 32) | (index & 0xFFFFFFFF)) & _U64]
    return np.random.Generator(np.random.Philox(key=np.array(key, dtype=np.uint64)))


def draw_initial_noise(seed: int, d: int, purpose: str = "x0", index: int = 0) -> np.ndarray:
    if d < 1:
        raise ConfigError("dim", "must be >= 1")
    pairs = (d + 1) // 2
    u = _generator(seed, purpose, index).random((pairs, 2))
    radius = np.sqrt(-2.0 * np.log1p(-u[:, 0]))  # 1 - u in (0, 1]
    angle = 2.0 * np.pi * u[:, 1]
    z = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1)
    return z.reshape(-1)[:d]


def checksum(x) -> str:
    """SHA-256 over the little-endian float64 bytes of ``x``."""
    return hashlib.sha256(np.ascontiguousarray(x, dtype="<f8").tobytes()).hexdigest()


@dataclass
class RunConfig:
    model: str = "gaussian"
    dim: int = 8
    solver: str = "ddim"
    n_fine: int = 64
    n_blocks: int | None = None
    tau: float = 1e-3
    max_iters: int | None = None
    mode: str = "compare"
    seed: int = 0
    workers: int | None = None
    beta_min: float = 0.1
    beta_max: float = 20.0
    out: str | None = None
    residuals: str | None = None
    gantt: str | None = None

    def validate(self):
        if self.n_fine < 1:
            raise ConfigError("n_fine", "must be >= 1")
        if self.dim < 1:
            raise ConfigError("dim", "must be >= 1")
        if self.mode not in MODES:
            raise ConfigError("mode", f"must be one of {', '.join(MODES)}")
        if self.solver not in SOLVER_KINDS:
            raise ConfigError("solver", f"must be one of {', '.join(SOLVER_KINDS)}")
        if not self.tau > 0:
            raise ConfigError("tau", "must be positive")
        if self.max_iters is not None and self.max_iters < 1:
            raise ConfigError("max_iters", "must be >= 1")
        if self.workers is not None and self.workers < 1:
            raise ConfigError("workers", "must be >= 1")
        if not (self.beta_min > 0 and self.beta_max > 0):
            raise ConfigError("beta_min", "schedule rates must be positive")
        if not 0 <= self.seed <= _U64:
            raise ConfigError("seed", "must be an unsigned 64-bit integer")
        try:
            self.discretization()
        except ValueError as exc:
            raise ConfigError("n_blocks", str(exc)) from None
        return self

    def resolved_blocks(self) -> int:
        if self.n_blocks is not None:
            return self.n_blocks
        return 1 if self.n_fine == 1 else optimal_block_size(self.n_fine)

    def discretization(self) -> Discretization:
        return Discretization(self.n_fine, self.resolved_blocks())

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown config field")
        return cls(**d)


@dataclass
class RunReport:
    config: dict
    results: dict = field(default_factory=dict)  # mode -> solve report + checksum
    deviations: dict = field(default_factory=dict)
    wall_time: dict = field(default_factory=dict)
    final_states: dict = field(default_factory=dict)
    gantt: str | None = None

    def to_json(self, include_wall_time=True) -> str:
        doc = {
            "schema": SCHEMA,
            "config": self.config,
            "results": self.results,
            "deviations": self.deviations,
        }
        if include_wall_time:
            doc["wall_time"] = self.wall_time
        return json.dumps(doc, indent=2, sort_keys=True)


def _propagators(cfg: RunConfig):
    model = resolve_model(cfg.model, cfg.dim)
    schedule = NoiseSchedule(cfg.beta_min, cfg.beta_max)
    meter = EvalMeter()
    F = Propagator(cfg.solver, model, cfg.n_fine, schedule, meter)
    G = Propagator(cfg.solver, model, cfg.n_fine, schedule, meter)
    return F, G


def _solve(mode, cfg, x0):
    """Returns (final state, SolveReport, pipeline result or None)."""
    F, G = _propagators(cfg)
    disc = cfg.discretization()
    conv = ConvergenceConfig(cfg.tau, cfg.max_iters)
    if mode == "sequential":
        x, rep = sequential_sample(F, x0, disc)
        return x, rep, None
    if mode == "srds":
        x, rep = srds_sample(F, G, x0, disc, conv, workers=cfg.workers or 1)
        return x, rep, None
    res = pipelined_run(F, G, x0, disc, conv, workers=cfg.workers)
    return res.x, res.report, res


def run(config: RunConfig) -> RunReport:
    """Execute the configured mode(s) on one noise draw and persist outputs."""
    config.validate()
    x0 = draw_initial_noise(config.seed, config.dim)
    modes = ("sequential", "srds", "srds-pipelined") if config.mode == "compare" else (config.mode,)
    report = RunReport(config=config.to_dict())
    for mode in modes:
        t0 = time.perf_counter()
        x, rep, pipe = _solve(mode, config, x0)
        report.wall_time[mode] = time.perf_counter() - t0
        entry = rep.to_dict()
        entry["checksum"] = checksum(x)
        entry["final_state"] = [float(v) for v in x]
        report.results[mode] = entry
        report.final_states[mode] = x
        if pipe is not None:
            report.gantt = pipe.trace.gantt_csv(pipe.graph)
        log.info("%s: iters=%d eff_serial=%d total=%d", mode, rep.iters, rep.eff_serial_evals, rep.total_evals)

    states = report.final_states
    for a, b in (("srds", "sequential"), ("srds-pipelined", "sequential"), ("srds-pipelined", "srds")):
        if a in states and b in states:
            report.deviations[f"{a}_vs_{b}"] = float(np.max(np.abs(states[a] - states[b])))
    _persist(config, report)
    return report


def residual_csv(report: RunReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["mode", "iter", "residual"])
    for mode, entry in report.results.items():
        for p, r in enumerate(entry["residuals"], start=1):
            w.writerow([mode, p, repr(r)])
    return buf.getvalue()


def _persist(cfg: RunConfig, report: RunReport):
    if cfg.out:
        Path(cfg.out).write_text(report.to_json() + "\n")
    if cfg.residuals:
        Path(cfg.residuals).write_text(residual_csv(report))
    if cfg.gantt and report.gantt is not None:
        Path(cfg.gantt).write_text(report.gantt)


def sweep_rows(configs):
    """One row per (config, mode); a failing config yields rows with ``error`` set."""
    for cfg in configs:
        modes = ("sequential", "srds", "srds-pipelined") if cfg.mode == "compare" else (cfg.mode,)
        try:
            cfg.validate()
            x0 = draw_initial_noise(cfg.seed, cfg.dim)
        except Exception as exc:  # noqa: BLE001  recorded in the row
            for mode in modes:
                yield _error_row(mode, cfg, exc)
            continue
        for mode in modes:
            try:
                x, rep, _ = _solve(mode, cfg, x0)
            except Exception as exc:  # noqa: BLE001
                yield _error_row(mode, cfg, exc)
                continue
            yield {
                "mode": mode,
                "N": cfg.n_fine,
                "blocks": cfg.resolved_blocks(),
                "solver": cfg.solver,
                "iters": rep.iters,
                "converged": rep.converged,
                "eff_serial_evals": rep.eff_serial_evals,
                "total_evals": rep.total_evals,
                "final_residual": repr(rep.residuals[-1]) if rep.residuals else "",
                "checksum": checksum(x),
                "error": "",
            }


def _error_row(mode, cfg, exc):
    row = dict.fromkeys(SWEEP_COLUMNS, "")
    blocks = cfg.n_blocks if cfg.n_blocks is not None else ""
    row.update(mode=mode, N=cfg.n_fine, blocks=blocks, solver=cfg.solver)
    row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def sweep(configs) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
    w.writeheader()
    for row in sweep_rows(configs):
        w.writerow(row)
    return buf.getvalue()


def grid(base: RunConfig, **axes) -> list:
    """Cartesian product of ``base`` over the given field -> values axes."""
    out = [base]
    for name, values in axes.items():
        if values:
            out = [replace(c, **{name: v}) for c in out for v in values]
    return out
