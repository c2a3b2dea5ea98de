import numpy as np
import pytest

from delaylyap import DelaySystem, GridSpec, PeriodicMatrixFunction, solve_delay_lyapunov


def s1():
    return DelaySystem.from_constant([[-1.0]], [[0.0]], [[1.0]])


def s2():
    return DelaySystem.from_constant([[0.0]], [[-1.0]], [[1.0]])


def s3():
    return DelaySystem.from_constant([[0.0]], [[0.0]], [[1.0]])


def s4():
    return DelaySystem.from_constant([[0.0]], [[-np.pi / 2]], [[1.0]])


def p3(W=None):
    A0 = PeriodicMatrixFunction(1.0, [[-1.0]], [[[0.3]]], [[[0.0]]])
    A1 = PeriodicMatrixFunction.constant([[-0.4]], 1.0)
    W = PeriodicMatrixFunction.constant([[1.0]], 1.0) if W is None else W
    return DelaySystem(1, 1.0, 1.0, A0, A1, W)


@pytest.fixture(scope="session")
def grid():
    return GridSpec()


@pytest.fixture(scope="session")
def res_s1(grid):
    return solve_delay_lyapunov(s1(), grid)


@pytest.fixture(scope="session")
def res_s2(grid):
    return solve_delay_lyapunov(s2(), grid)


@pytest.fixture(scope="session")
def res_p3(grid):
    return solve_delay_lyapunov(p3(), grid)
