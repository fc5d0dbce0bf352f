import numpy as np
import pytest

from zmlim.config import ExperimentConfig
from zmlim.fields import Grid, ScalarField, VectorField
from zmlim.random_fields import philox


@pytest.fixture
def g2():
    return Grid(2, 32)


@pytest.fixture
def g3():
    return Grid(3, 16)


@pytest.fixture
def rng():
    return philox(1234, "test")


def scalar(grid, fn, name=""):
    return ScalarField(grid, fn(*grid.x), name)


def vector(grid, *fns, name=""):
    return VectorField(grid, np.array([f(*grid.x) for f in fns]), name)


def small_config(N=32, kmax=2, amp=0.3):
    cfg = ExperimentConfig()
    cfg.grid.N = N
    cfg.data.kmax = kmax
    for k in ("v_I", "q_I", "psi_I", "sigma_E", "u_E", "T_E"):
        setattr(cfg.data, k, amp)
    cfg.data.T_I = 0.2
    return cfg


ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
