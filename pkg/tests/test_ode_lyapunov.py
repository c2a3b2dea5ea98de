import numpy as np
import pytest

from delaylyap import PeriodicMatrixFunction, SingularStein, solve_ode_lyapunov
from delaylyap.ode_lyapunov import assemble_WT, ode_fundamental, p0_series
from delaylyap.stein import stein_residual, stein_solve


def const(v):
    return PeriodicMatrixFunction.constant(np.atleast_2d(v), 1.0)


def test_fundamental_examples():
    assert np.allclose(ode_fundamental(const(0.0), 1.0).M, np.eye(1))
    assert abs(ode_fundamental(const(-1.0), 1.0).M[0, 0] - np.exp(-1.0)) < 1e-12
    a = 0.5
    A0 = PeriodicMatrixFunction(1.0, [[-a]], [[[0.0]]], [[[1.0]]])
    assert abs(ode_fundamental(A0, 1.0).M[0, 0] - np.exp(-a)) < 1e-10


def test_weight_integral_examples():
    assert abs(solve_ode_lyapunov(const(-1.0), const(2.0), 1.0).W_T[0, 0] - (1 - np.exp(-2.0))) < 1e-8
    assert np.allclose(solve_ode_lyapunov(const(-1.0), const(0.0), 1.0).W_T, 0.0)
    W_T = assemble_WT(PeriodicMatrixFunction.constant(np.zeros((2, 2)), 2.0),
                      PeriodicMatrixFunction.constant(np.eye(2), 2.0), 2.0)
    assert np.allclose(W_T, 2 * np.eye(2), atol=1e-13)


def test_stein_examples():
    M = np.array([[np.exp(-1.0)]])
    X, rc = stein_solve(M, np.array([[1 - np.exp(-2.0)]]))
    assert abs(X[0, 0] - 1.0) < 1e-14 and rc > 0.1
    Q = np.array([[2.0, 0.5], [0.5, 1.0]])
    X, _ = stein_solve(np.zeros((2, 2)), Q)
    assert np.array_equal(X, Q)
    with pytest.raises(SingularStein):
        solve_ode_lyapunov(const(0.0), const(1.0), 1.0)


def test_scalar_P_constant():
    sol = solve_ode_lyapunov(const(-1.0), const(2.0), 1.0)
    t = np.linspace(0, 3, 31)
    assert np.max(np.abs(sol.P(t) - 1.0)) < 1e-10
    assert sol.is_positive_definite()
    assert abs(sol.P(1.0)[0, 0] - sol.P0[0, 0]) < 1e-12
    zero = solve_ode_lyapunov(const(-1.0), const(0.0), 1.0)
    assert np.all(np.abs(zero.P(t)) < 1e-15)


def test_unstable_scalar():
    sol = solve_ode_lyapunov(const(1.0), const(2.0), 1.0)
    assert abs(sol.P0[0, 0] + 1.0) < 1e-10
    assert not sol.is_positive_definite()


def test_periodic_system_properties():
    A0 = PeriodicMatrixFunction(1.0, [[0.0, 1.0], [-4.0, -0.6]], [[[0, 0], [-1.5, 0]], [[0, 0.1], [0, 0]]],
                                np.zeros((2, 2, 2)))
    W = PeriodicMatrixFunction(1.0, [[2.0, 0.0], [0.0, 1.0]], [[[0.3, 0.1], [0.1, 0.0]]], np.zeros((1, 2, 2)))
    sol = solve_ode_lyapunov(A0, W, 1.0)
    P0 = sol.P0
    assert np.max(np.abs(P0 - P0.T)) < 1e-12
    assert sol.stein_residual() < 1e-10 * (1 + np.linalg.norm(P0))
    assert np.max(np.abs(sol.P(1.0) - P0)) < 1e-8
    rng = np.random.default_rng(0)
    eps = 1e-4
    for t in rng.uniform(0.05, 0.95, 10):
        dP = (sol.P(t + eps) - sol.P(t - eps)) / (2 * eps)
        A = A0.eval(t)
        assert np.max(np.abs(dP + A.T @ sol.P(t) + sol.P(t) @ A + W.eval(t))) < 1e-5
    assert np.max(np.abs(np.linalg.eigvals(sol.M))) < 1
    terms, Mk = np.zeros_like(P0), np.eye(2)
    while np.linalg.norm(Mk, 2) > 1e-10:
        terms += Mk.T @ sol.W_T @ Mk
        Mk = Mk @ sol.M
    assert np.max(np.abs(terms - P0)) < 1e-8
    assert np.max(np.abs(p0_series(sol.M, sol.W_T) - P0)) < 1e-8


def test_stein_residual_helper():
    rng = np.random.default_rng(1)
    R = 0.3 * rng.normal(size=(5, 5))
    Q = rng.normal(size=(5, 5))
    X, _ = stein_solve(R, Q)
    assert stein_residual(R, X, Q) < 1e-12


def test_dump_csv(tmp_path):
    sol = solve_ode_lyapunov(const(-1.0), const(2.0), 1.0)
    path = tmp_path / "P.csv"
    sol.dump_csv(path, [0.0, 0.5])
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "t,i,j,value" and len(lines) == 3
