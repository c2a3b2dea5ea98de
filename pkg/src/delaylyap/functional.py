"""Lyapunov-Krasovskii functional v0 and the operator P0 built from U.

    v0(t, phi) = phi0^T U(t, t) phi0 + 2 phi0^T int U(t, t + theta + h) A1 Phi dtheta
                 + int int Phi^T(theta) A1^T U(t + theta + h, t + s + h) A1 Phi(s) ds dtheta,

with A1 evaluated at the matching arguments. Through the factorised form of the
extended matrix, U(b1, b2) = E(b1)^T X E(b2) + J(b1, b2), the functional
becomes

    v0(t, phi) = y^T X y + int_a^{(p+1)T} x^T(tau) W(tau) x(tau) dtau,

where a is t reduced into (-h, T - h], x solves the system from (a, phi),
and y = E(a) phi0 + int E(a + theta + h) A1 Phi dtheta is obtained from the
kernel E by quadrature.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .propagation import cauchy_solution, integrate_dde
from .quadrature import composite, merge_breaks, reference_rule, split_composite
from .system import HilbertState


def _reduce_time(res, t):
    T, h = res.system.T, res.system.h
    j = np.ceil((t - (T - h)) / T - 1e-12)
    a = t - j * T
    if a <= -h + 1e-12 * T:
        a += T
    return a


def _theta_rule(res, a, state, rule="gauss-4"):
    """Quadrature on [-h, 0] split at state breaks and at b = a + theta + h on the node lattice."""
    h = res.system.h
    step = h / res.grid.m
    base = merge_breaks(-h, 0.0, step, state.break_points())
    x, w = split_composite(base, np.array([[-a - h]]), step, rule)
    return x[0], w[0]


def data_vector(res, a, state):
    """y = E(a) phi0 + int E(a + theta + h) A1(a + theta + h) Phi(theta) dtheta, shape (N,)."""
    n = res.n
    h = res.system.h
    x, w = _theta_rule(res, a, state)
    keep = w > 0
    x, w = x[keep], w[keep]
    b = a + x + h
    E = res.E(np.concatenate([[a], b]))
    S, J = E.shape[:2]
    E = E.reshape(S, J * n, n)
    g = np.einsum("qij,qj->qi", res.system.A1.eval(b), state.eval_tail(x))
    return E[0] @ state.head + np.einsum("q,qpi,qi->p", w, E[1:], g)


def _energy(res, traj, lo, hi):
    """int_lo^hi x^T W x along a trajectory, split at its breakpoints."""
    br = traj.breakpoints()
    base = merge_breaks(lo, hi, traj.dt, br[(br > lo) & (br < hi)])
    x, w = composite(base, "gauss-3")
    xs = traj(x)
    return float(np.einsum("q,qi,qij,qj->", w, xs, res.system.W.eval(x), xs))


def _trajectory(res, a, state, t_end=None):
    T = res.system.T
    t_end = (res.depth + 1) * T if t_end is None else t_end
    return integrate_dde(res.system, a, state, t_end, dt=res.table.dt)


def v0(res, t, state):
    """Functional v0(t, phi) through the kernel E and the trajectory energy."""
    a = _reduce_time(res, float(t))
    y = data_vector(res, a, state)
    traj = _trajectory(res, a, state)
    return float(y @ res.X @ y) + _energy(res, traj, a, (res.depth + 1) * res.system.T)


def v0_propagated(res, t, state):
    """v0 with y_j = delta_j0 x(T) + int l_j(h + xi) A1(h + xi) x(T + xi) dxi.

    Exchanging the order of integration in the data vector turns the kernel
    quadrature into an integral of the trajectory itself.
    """
    system = res.system
    T, h = system.T, system.h
    a = _reduce_time(res, float(t))
    traj = _trajectory(res, a, state)
    y = _trajectory_data(res, traj)
    return float(y @ res.X @ y) + _energy(res, traj, a, (res.depth + 1) * T)


def _trajectory_data(res, traj):
    system = res.system
    T, h, n = system.T, system.h, system.n
    br = traj.breakpoints() - T
    base = merge_breaks(-h, 0.0, h / res.grid.m, br[(br > -h) & (br < 0)])
    xi, w = composite(base, "gauss-4")
    idx, val = res.basis.weights(h + xi)
    f = np.einsum("qij,qj->qi", system.A1.eval(h + xi), traj(T + xi)) * w[:, None]
    y = np.zeros((res.basis.count, n))
    for k in range(idx.shape[1]):
        np.add.at(y, idx[:, k], val[:, k, None] * f)
    y[0] += traj(np.array(T))
    return y.reshape(-1)


def v0_quadrature(res, t, state, order=4):
    """Reference v0 from pointwise values of U and the three-term formula.

    Diagonal cells of the double integral are split into triangles, so the
    kink of U along the diagonal does not spoil the tensor rule.
    """
    system = res.system
    h, m = system.h, res.grid.m
    a = _reduce_time(res, float(t))
    step = h / m
    base = merge_breaks(-h, 0.0, step, state.break_points())
    x, w = composite(base, f"gauss-{order}")
    b = a + x + h
    g = np.einsum("qij,qj->qi", system.A1.eval(b), state.eval_tail(x)) * w[:, None]
    phi0 = state.head
    U_aa = res.U(a, a)
    U_ab = res.U(np.full(b.size, a), b)
    total = phi0 @ U_aa @ phi0 + 2 * phi0 @ np.einsum("qij,qj->i", U_ab, g)
    # off-diagonal cells on a tensor grid
    cell = np.searchsorted(base, x, side="right") - 1
    Ug = res.U_grid(b, b)
    same = cell[:, None] == cell[None, :]
    total += np.einsum("pi,pqij,qj->", g, np.where(same[..., None, None], 0.0, Ug), g)
    # diagonal cells: two triangles mapped from the square
    xr, wr = reference_rule(f"gauss-{order}")
    u, v = np.meshgrid(xr, xr, indexing="ij")
    wu = np.outer(wr, wr)
    for c in range(base.size - 1):
        lo, d = base[c], base[c + 1] - base[c]
        # triangle s < theta: theta = lo + d u, s = lo + d u v
        th = lo + d * u.ravel()
        ss = lo + d * (u * v).ravel()
        ww = (d * d * u * wu).ravel()
        B1, B2 = a + th + h, a + ss + h
        Uv = res.U(B1, B2)
        f1 = np.einsum("qij,qj->qi", system.A1.eval(B1), state.eval_tail(th))
        f2 = np.einsum("qij,qj->qi", system.A1.eval(B2), state.eval_tail(ss))
        total += 2 * np.einsum("q,qi,qij,qj->", ww, f1, Uv, f2)
    return float(total)


# ---------------------------------------------------------------- operator P0

@dataclass
class AssembledP0:
    """Operator P0 on R^n x L2 built from the delay Lyapunov matrix.

    Head-head block U0(0, 0); head-tail kernel theta -> U0(0, h + theta) A1(h + theta);
    tail-tail kernel (theta, s) -> A1^T(h + theta) U0(h + theta, h + s) A1(h + s).
    """

    res: object
    head_head: np.ndarray = field(init=False)

    def __post_init__(self):
        self.head_head = self.res.U0[0, 0].copy()

    def head_tail(self, theta):
        h = self.res.system.h
        theta = np.atleast_1d(theta)
        return self.res.U(np.zeros_like(theta), h + theta) @ self.res.system.A1.eval(h + theta)

    def tail_tail(self, theta, s):
        h = self.res.system.h
        A1 = self.res.system.A1
        U = self.res.U(h + np.asarray(theta), h + np.asarray(s))
        return np.swapaxes(A1.eval(h + np.asarray(theta)), -1, -2) @ U @ A1.eval(h + np.asarray(s))

    def contraction(self, p, state, y=None, traj=None):
        """int U(p, b) (state density) over the segment at time 0, for points p in [0, h].

        Equals U(p, 0) phi0 + int U(p, h + s) A1(h + s) Phi(s) ds.
        """
        res = self.res
        system = res.system
        n = system.n
        p = np.atleast_1d(np.asarray(p, dtype=float))
        top = (res.depth + 1) * system.T
        if y is None:
            y = data_vector(res, 0.0, state)
        if traj is None:
            traj = _trajectory(res, 0.0, state)
        E = res.E(p).reshape(p.size, -1, n)
        first = np.einsum("rpi,pq,q->ri", E, res.X, y)
        br = traj.breakpoints()
        base = merge_breaks(0.0, top, res.table.dt, br[(br > 0) & (br < top)])
        x, w = split_composite(base, p[:, None], res.table.dt, "gauss-3")
        w = np.where(x >= p[:, None], w, 0.0)
        K = res.table.eval_K(x, p[:, None])
        xs = traj(x)
        second = np.einsum("rq,rqji,rqjk,rqk->ri", w, K, system.W.eval(x), xs)
        return first + second

    def apply(self, state):
        """P0 phi as a HilbertState with nodal tail and exact tail evaluator."""
        res = self.res
        system = res.system
        h = system.h
        y = data_vector(res, 0.0, state)
        traj = _trajectory(res, 0.0, state)

        def tail(theta):
            theta = np.asarray(theta, dtype=float)
            flat = theta.ravel()
            c = self.contraction(h + flat, state, y, traj)
            out = np.einsum("rji,rj->ri", system.A1.eval(h + flat), c)
            return out.reshape(theta.shape + (system.n,))

        head = self.contraction(np.array([0.0]), state, y, traj)[0]
        nodes = np.linspace(-h, 0.0, state.m + 1)
        return HilbertState(head, tail(nodes), h, tail_fn=tail)

    def quadratic(self, phi, psi=None):
        """<phi, P0 psi> = y_phi^T X y_psi + int_0^{(p+1)T} x_phi^T W x_psi."""
        res = self.res
        psi = phi if psi is None else psi
        top = (res.depth + 1) * res.system.T
        yp = data_vector(res, 0.0, phi)
        yq = yp if psi is phi else data_vector(res, 0.0, psi)
        tp = _trajectory(res, 0.0, phi)
        tq = tp if psi is phi else _trajectory(res, 0.0, psi)
        br = np.concatenate([tp.breakpoints(), tq.breakpoints()])
        base = merge_breaks(0.0, top, res.table.dt, br[(br > 0) & (br < top)])
        x, w = composite(base, "gauss-3")
        xa, xb = tp(x), tq(x)
        return float(yp @ res.X @ yq + np.einsum("q,qi,qij,qj->", w, xa, res.system.W.eval(x), xb))


def assemble_P0(res):
    return AssembledP0(res)


def apply_P0(res, state):
    return AssembledP0(res).apply(state)


def monodromy_image(res, state):
    """U phi: the segment x_T of the solution from (0, phi), via the Cauchy formula."""
    system = res.system
    T, h = system.T, system.h
    table = res.table
    head = cauchy_solution(table, 0.0, state, np.array([T]))[0]

    def tail(theta):
        theta = np.asarray(theta, dtype=float)
        t = T + theta.ravel()
        out = np.empty((t.size, system.n))
        past = t < 0
        if np.any(past):
            out[past] = state.eval_tail(t[past])
        if np.any(~past):
            out[~past] = cauchy_solution(table, 0.0, state, t[~past])
        return out.reshape(theta.shape + (system.n,))

    k = np.arange(0, int(np.ceil(T / h)) + 2)
    br = np.concatenate([k * h - T, [b + (j + 1) * h - T for b in state.break_points() for j in k]])
    br = br[(br > -h) & (br < 0)]
    nodes = np.linspace(-h, 0.0, state.m + 1)
    return HilbertState(head, tail(nodes), h, tail_fn=tail, breaks=tuple(br))


def operator_stein_residual(res, state):
    """Relative residual of <phi,P0 phi> - <U phi, P0 U phi> = int_0^T x^T W x."""
    P0 = AssembledP0(res)
    image = monodromy_image(res, state)
    lhs = P0.quadratic(state) - P0.quadratic(image)
    traj = _trajectory(res, 0.0, state, res.system.T)
    rhs = _energy(res, traj, 0.0, res.system.T)
    return abs(lhs - rhs) / max(abs(rhs), 1e-300)


def nonnegativity_probe(res, states):
    """min <phi, P0 phi> / ||phi||^2 over the given states."""
    P0 = AssembledP0(res)
    return min(P0.quadratic(s) / s.inner(s).real for s in states)


# ---------------------------------------------------------------- derivative check

@dataclass
class DerivativeCheckReport:
    windows: list
    integrated: np.ndarray
    points: np.ndarray
    fd: np.ndarray
    prescribed: np.ndarray

    @property
    def max_integrated(self):
        return float(np.max(np.abs(self.integrated))) if self.integrated.size else 0.0

    @property
    def max_pointwise(self):
        return float(np.max(np.abs(self.fd - self.prescribed))) if self.fd.size else 0.0

    def dump_csv(self, path):
        """Write t,fd_derivative,prescribed,abs_error rows."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t", "fd_derivative", "prescribed", "abs_error"])
            for t, f, p in zip(self.points, self.fd, self.prescribed):
                wr.writerow([repr(float(t)), repr(float(f)), repr(float(p)), repr(float(abs(f - p)))])


def derivative_check(res, state, rng, t0=0.0, horizon=3.0, windows=20, points=10, eta_steps=2):
    """Check dv0/dt = -x^T W x along the trajectory from (t0, state).

    Window endpoints and sample points lie on the integration mesh, so the
    segments x_t have their breakpoints on the mesh as well. Returns the
    integrated residuals v0(t1) - v0(ta) + int x^T W x and pointwise central
    differences with step ``eta_steps`` mesh steps, taken only where the
    stencil stays clear of the trajectory's breakpoints.
    """
    system = res.system
    dt = res.table.dt
    traj = integrate_dde(system, t0, state, t0 + horizon + 2 * dt * (eta_steps + 1), dt=dt)
    nsteps = int(round(horizon / dt))
    cache = {}

    def value(k):
        if k not in cache:
            t = t0 + k * dt
            cache[k] = v0(res, t, traj.state_at(t, res.grid.m))
        return cache[k]

    wins = []
    integ = []
    for _ in range(windows):
        ka, kb = np.sort(rng.choice(np.arange(1, nsteps + 1), size=2, replace=False))
        ta, tb = t0 + ka * dt, t0 + kb * dt
        wins.append((ta, tb))
        integ.append(value(kb) - value(ka) + _energy(res, traj, ta, tb))
    pts, fds, pres = [], [], []
    # skip sample points whose stencil reaches a breakpoint of the trajectory
    ks = np.arange(eta_steps + 1, nsteps)
    br = traj.breakpoints()
    gap = np.min(np.abs((t0 + ks * dt)[:, None] - br[None, :]), axis=1)
    ks = ks[gap > eta_steps * dt * (1 + 1e-9)]
    for k in rng.choice(ks, size=min(points, ks.size), replace=False):
        t = t0 + k * dt
        fd = (value(k + eta_steps) - value(k - eta_steps)) / (2 * eta_steps * dt)
        x = traj(np.array(t))
        pts.append(t)
        fds.append(fd)
        pres.append(-float(x @ system.W.eval(t) @ x))
    return DerivativeCheckReport(wins, np.array(integ), np.array(pts), np.array(fds), np.array(pres))


# ---------------------------------------------------------------- evaluator

class FunctionalEvaluator:
    """Convenience wrapper exposing v0 and the kernels M, Q, R of the functional."""

    def __init__(self, res):
        self.res = res

    def v0(self, t, state):
        return v0(self.res, t, state)

    def M(self, t):
        return self.res.U(t, t)

    def Q(self, t, theta):
        h = self.res.system.h
        return self.res.U(t, t + np.asarray(theta) + h)

    def R(self, t, theta, s):
        h = self.res.system.h
        return self.res.U(t + np.asarray(theta) + h, t + np.asarray(s) + h)
