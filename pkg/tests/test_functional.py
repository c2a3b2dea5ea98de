import numpy as np
import pytest

from delaylyap import (
    AssembledP0, DelaySystem, FunctionalEvaluator, GridSpec, HilbertState, PeriodicMatrixFunction,
    derivative_check, integrate_dde, monodromy_image, nonnegativity_probe, operator_stein_residual,
    solve_delay_lyapunov, v0,
)
from delaylyap.functional import apply_P0, v0_propagated, v0_quadrature

from conftest import p3, s2


def unit_state(m=32):
    return HilbertState([1.0], np.ones((m + 1, 1)), 1.0)


def head_state(value=1.0, m=32):
    return HilbertState([value], np.zeros((m + 1, 1)), 1.0)


def random_states(count, seed, m=32):
    rng = np.random.default_rng(seed)
    return [HilbertState.random(1, 1.0, m, rng) for _ in range(count)]


@pytest.fixture(scope="module")
def res_s1w2():
    return solve_delay_lyapunov(DelaySystem.from_constant([[-1.0]], [[0.0]], [[2.0]]), GridSpec())


def test_v0_examples(res_s1w2):
    assert v0(res_s1w2, 0.0, head_state(0.0)) == 0.0
    for t in (0.0, 0.37, 2.9):
        assert abs(v0(res_s1w2, t, head_state()) - 1.0) < 1e-6


def test_apply_P0_without_delay(res_s1w2):
    state = random_states(1, 0)[0]
    image = apply_P0(res_s1w2, state)
    assert np.allclose(image.head, res_s1w2.U0[0, 0] @ state.head, atol=1e-12)
    assert np.max(np.abs(image.eval_tail(np.linspace(-1, 0, 11)))) == 0.0


def test_apply_P0_zero_matrix():
    zero = PeriodicMatrixFunction.constant([[0.0]], 1.0)
    res = solve_delay_lyapunov(p3(zero), GridSpec(m=16))
    image = apply_P0(res, random_states(1, 1, m=16)[0])
    assert np.all(image.head == 0.0) and np.all(image.tail == 0.0)


def test_two_paths_s2(res_s2):
    P0 = AssembledP0(res_s2)
    assert abs(P0.quadratic(unit_state()) - v0(res_s2, 0.0, unit_state())) < 1e-8
    for state in random_states(10, 2):
        assert abs(P0.quadratic(state) - v0(res_s2, 0.0, state)) < 1e-8


def test_v0_variants_agree(res_p3):
    state = random_states(1, 3)[0]
    for t in (0.0, 0.45):
        ref = v0(res_p3, t, state)
        assert abs(v0_propagated(res_p3, t, state) - ref) < 1e-9
    assert abs(v0_quadrature(res_p3, 0.45, state) - v0(res_p3, 0.45, state)) < 1e-8


def test_self_adjoint(res_p3):
    P0 = AssembledP0(res_p3)
    phi, psi = random_states(2, 4)
    assert abs(P0.quadratic(phi, psi) - P0.quadratic(psi, phi)) < 1e-10
    assert abs(P0.quadratic(phi, psi) - apply_P0(res_p3, psi).inner(phi).real) < 1e-8


def test_quadratic_and_periodic(res_p3):
    rng = np.random.default_rng(5)
    state = random_states(1, 5)[0]
    alpha = rng.uniform(-3, 3)
    t = 0.3
    base = v0(res_p3, t, state)
    assert abs(v0(res_p3, t, state.scaled(alpha)) - alpha ** 2 * base) < 1e-10 * (1 + abs(base)) * alpha ** 2
    assert abs(v0(res_p3, t + 1.0, state) - base) < 1e-6
    assert abs(v0(res_p3, t + 4.0, state) - base) < 1e-6


def test_operator_stein(res_s1, res_s2):
    for res in (res_s1, res_s2):
        assert max(operator_stein_residual(res, s) for s in random_states(3, 6)) < 1e-5


def test_monodromy_image_vs_stepper(res_p3):
    state = random_states(1, 7)[0]
    image = monodromy_image(res_p3, state)
    traj = integrate_dde(p3(), 0.0, state, 1.0)
    th = np.linspace(-1, 0, 9)
    assert np.max(np.abs(image.eval_tail(th) - traj(1.0 + th))) < 1e-6


def test_nonnegativity(res_s1, res_s2):
    assert nonnegativity_probe(res_s1, random_states(5, 8)) >= -1e-8
    assert nonnegativity_probe(res_s2, random_states(5, 9)) >= -1e-6


def test_derivative_zero_weight():
    zero = PeriodicMatrixFunction.constant([[0.0]], 1.0)
    res = solve_delay_lyapunov(p3(zero), GridSpec(m=16))
    rep = derivative_check(res, random_states(1, 10, m=16)[0], np.random.default_rng(0), windows=3, points=3)
    assert rep.max_integrated < 1e-7 and rep.max_pointwise < 1e-7


def test_derivative_s1(res_s1w2):
    rep = derivative_check(res_s1w2, head_state(), np.random.default_rng(1), horizon=2.0, windows=4, points=4,
                           eta_steps=1)
    assert np.allclose(rep.prescribed, -2 * np.exp(-2 * rep.points), atol=1e-9)
    assert rep.max_pointwise < 1e-5 and rep.max_integrated < 1e-8


def test_derivative_s2(res_s2, tmp_path):
    rep = derivative_check(res_s2, random_states(1, 11)[0], np.random.default_rng(2), windows=4, points=4)
    assert rep.max_integrated < 1e-5 and rep.max_pointwise < 1e-4
    path = tmp_path / "d.csv"
    rep.dump_csv(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "t,fd_derivative,prescribed,abs_error" and len(lines) == 5


def test_evaluator_kernels(res_p3):
    ev = FunctionalEvaluator(res_p3)
    assert np.allclose(ev.M(0.2), res_p3.U(0.2, 0.2))
    assert np.allclose(ev.Q(0.2, -1.0), ev.M(0.2))
    assert np.allclose(ev.R(0.2, -0.3, -0.6), res_p3.U(0.9, 0.6))
