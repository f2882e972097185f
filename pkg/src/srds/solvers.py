"""Fine-grid propagators (Euler, Heun, DDIM) with metered model evaluations."""

from __future__ import annotations

import contextvars
import math
import threading
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, NumericError, ScheduleOrientationError
from .models import NoiseSchedule, diffusion_time, drift, eps_from_score

SOLVER_KINDS = ("euler", "heun", "ddim")
EVALS_PER_STEP = {"euler": 1, "heun": 2, "ddim": 1}

# Rounding slack tolerated when a Heun predictor lands just past u = 1.
_HEUN_ENDPOINT_EPS = 1e-12

current_task: contextvars.ContextVar[str] = contextvars.ContextVar("current_task", default="-")


def block_cost(n: int, b: int) -> int:
    """Per-refinement serial cost with ``b`` blocks: longest fine solve plus the sweep."""
    return -(-n // b) + b


def optimal_block_size(n: int) -> int:
    """Block count minimising ``ceil(n / b) + b``.

    The cost has flat stretches of tied minimisers for many ``n``; ties go to
    the ``b`` nearest ``sqrt(n)``, then to the smaller ``b``.
    """
    if n < 2:
        raise DomainError("optimal_block_size needs n >= 2")
    root = math.sqrt(n)
    # Some minimiser always lies in this window and it holds the one nearest sqrt(n).
    r = math.isqrt(n)
    window = range(max(1, r - 1), min(n, r + 2) + 1)
    return min(window, key=lambda b: (block_cost(n, b), abs(b - root), b))


@dataclass(frozen=True)
class Discretization:
    """Fine grid ``u_j = j / n_fine`` split into ``n_blocks`` coarse blocks.

    All blocks span ``ceil(n_fine / n_blocks)`` fine steps except the last,
    which may be shorter. The default block count is ``optimal_block_size``,
    which is ``sqrt(n_fine)`` for perfect squares.
    """

    n_fine: int
    n_blocks: int | None = None

    def __post_init__(self):
        if self.n_fine < 1:
            raise DomainError("n_fine must be >= 1")
        if self.n_blocks is None:
            default = 1 if self.n_fine == 1 else optimal_block_size(self.n_fine)
            object.__setattr__(self, "n_blocks", default)
        if not 1 <= self.n_blocks <= self.n_fine:
            raise DomainError(f"n_blocks={self.n_blocks} must lie in [1, {self.n_fine}]")
        if (self.n_blocks - 1) * self.block_steps >= self.n_fine:
            raise DomainError(
                f"n_fine={self.n_fine} cannot be split into {self.n_blocks} non-empty "
                f"blocks of {self.block_steps} steps"
            )

    @property
    def block_steps(self) -> int:
        return -(-self.n_fine // self.n_blocks)

    @property
    def boundaries(self) -> list[int]:
        s = self.block_steps
        return [min(i * s, self.n_fine) for i in range(self.n_blocks + 1)]

    def block(self, i: int) -> tuple[int, int]:
        """Fine-index span of block ``i`` (0-based)."""
        s = self.block_steps
        return i * s, min((i + 1) * s, self.n_fine)

    def steps_in_block(self, i: int) -> int:
        lo, hi = self.block(i)
        return hi - lo

    def node(self, j: int) -> float:
        return j / self.n_fine

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.n_fine + 1) / self.n_fine


class EvalMeter:
    """Thread-safe counter of model evaluations, also tallied per task id."""

    def __init__(self):
        self._lock = threading.Lock()
        self.total = 0
        self.by_task = Counter()

    def tick(self, n=1):
        task = current_task.get()
        with self._lock:
            self.total += n
            self.by_task[task] += n

    def reset(self):
        with self._lock:
            self.total = 0
            self.by_task.clear()

    def snapshot(self) -> dict:
        with self._lock:
            return dict(self.by_task)

    def for_task(self, task: str) -> int:
        with self._lock:
            return self.by_task.get(task, 0)


@dataclass
class Propagator:
    """A solver bound to a model, schedule, fine grid and meter."""

    kind: str
    model: object
    n_fine: int
    schedule: NoiseSchedule = field(default_factory=NoiseSchedule)
    meter: EvalMeter = field(default_factory=EvalMeter)

    def __post_init__(self):
        if self.kind not in SOLVER_KINDS:
            raise DomainError(f"unknown solver {self.kind!r}; choose from {SOLVER_KINDS}")

    @property
    def evals_per_step(self) -> int:
        return EVALS_PER_STEP[self.kind]

    def _drift(self, x, u):
        self.meter.tick()
        h = drift(self.model, self.schedule, x, u)
        if not np.all(np.isfinite(h)):
            raise NumericError("non-finite drift", u=u, node=round(u * self.n_fine))
        return h

    def euler_step(self, x, u, du):
        _check_step(u, du)
        return x + self._drift(x, u) * du

    def heun_step(self, x, u, du):
        _check_step(u, du)
        k1 = self._drift(x, u)
        u2 = u + du
        if u2 > 1.0:
            u2 = 1.0
        k2 = self._drift(x + k1 * du, u2)
        return x + 0.5 * (k1 + k2) * du

    def ddim_step(self, x, u, u_next):
        s, s_next = diffusion_time(u), diffusion_time(u_next)
        a = self.schedule.alpha_bar(s)
        a_next = self.schedule.alpha_bar(s_next)
        if a_next < a:
            raise ScheduleOrientationError(f"ddim step from u={u} to u={u_next} moves toward noise")
        self.meter.tick()
        eps = eps_from_score(self.model.score(x, s, self.schedule), a)
        if not np.all(np.isfinite(eps)):
            raise NumericError("non-finite score", u=u, node=round(u * self.n_fine))
        ratio = math.sqrt(a_next / a)
        return ratio * x + (math.sqrt(1.0 - a_next) - ratio * math.sqrt(1.0 - a)) * eps

    def step(self, x, u, u_next):
        if self.kind == "ddim":
            return self.ddim_step(x, u, u_next)
        du = u_next - u
        if self.kind == "euler":
            return self.euler_step(x, u, du)
        return self.heun_step(x, u, du)


def _check_step(u, du):
    if not du > 0:
        raise DomainError(f"step size du={du!r} must be positive")
    if u < 0 or u + du > 1.0 + _HEUN_ENDPOINT_EPS:
        raise DomainError(f"step [{u}, {u + du}] leaves [0, 1]")


def substep_nodes(j_start: int, j_end: int, n_steps: int) -> list[int]:
    """Fine indices visited by ``n_steps`` equal sub-steps; the last absorbs any remainder."""
    span = j_end - j_start
    if span == 0:
        return [j_start]
    if n_steps < 1 or n_steps > span:
        raise DomainError(f"n_steps={n_steps} invalid for a span of {span} fine steps")
    size = span // n_steps
    return [j_start + k * size for k in range(n_steps)] + [j_end]


def propagate(p: Propagator, x, j_start: int, j_end: int, n_steps: int) -> np.ndarray:
    """Advance ``x`` from fine node ``j_start`` to ``j_end`` in ``n_steps`` solver steps."""
    if not 0 <= j_start <= j_end <= p.n_fine:
        raise DomainError(f"fine indices [{j_start}, {j_end}] outside [0, {p.n_fine}]")
    x = np.asarray(x, dtype=np.float64)
    nodes = substep_nodes(j_start, j_end, n_steps)
    for a, b in zip(nodes[:-1], nodes[1:]):
        x = p.step(x, a / p.n_fine, b / p.n_fine)
    return x
