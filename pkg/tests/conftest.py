import numpy as np
import pytest

from srds import Discretization, EvalMeter, LinearDrift, NoiseSchedule, Propagator


def make_pair(kind, model, n_fine, schedule=None):
    """Fine and coarse propagators sharing one meter."""
    schedule = schedule or NoiseSchedule()
    meter = EvalMeter()
    F = Propagator(kind, model, n_fine, schedule, meter)
    G = Propagator(kind, model, n_fine, schedule, meter)
    return F, G


@pytest.fixture
def linear_pair():
    def build(n_fine=16, dim=2, kind="euler"):
        return make_pair(kind, LinearDrift(dim), n_fine)

    return build


@pytest.fixture
def x0_2d():
    return np.array([0.8, -1.3])


@pytest.fixture
def disc16():
    return Discretization(16, 4)
