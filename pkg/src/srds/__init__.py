"""Parareal-style parallel-in-time sampling for probability-flow ODEs."""

from .errors import (
    ConfigError,
    DomainError,
    NumericError,
    ScheduleOrientationError,
    ShapeError,
    SRDSError,
)
from .harness import RunConfig, RunReport, draw_initial_noise, run, sweep
from .models import (
    GaussianModel,
    GMMModel,
    LinearDrift,
    MLPModel,
    NoiseSchedule,
    alpha_bar,
    drift,
    eps_from_score,
    load_model,
    make_preset,
    score,
)
from .parareal import (
    BlockTrajectory,
    ConvergenceConfig,
    SolveReport,
    check_convergence,
    init_coarse,
    optimal_block_size,
    refine,
    sequential_sample,
    srds_sample,
)
from .pipeline import (
    ClockTrace,
    TaskGraph,
    TaskNode,
    build_task_graph,
    pipelined_run,
    pipelined_srds_sample,
    simulate_schedule,
)
from .solvers import Discretization, EvalMeter, Propagator, propagate

__version__ = "0.1.0"
