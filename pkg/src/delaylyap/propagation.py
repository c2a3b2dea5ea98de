"""Method-of-steps integration and the tabulated fundamental matrix K(t, s).

All integrations use classical RK4 on a uniform mesh of step dt = h / (m * substeps),
so the delay breakpoints t0 + k h are mesh nodes. Dense output is cubic
Hermite on each step; derivatives are stored as separate left and right limits
because the delayed term jumps at t0 + h.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidSystem, NonFiniteState, OutOfTable
from .quadrature import merge_breaks, split_composite
from .system import GridSpec, HilbertState


@dataclass(frozen=True)
class Mesh:
    dt: float
    nh: int
    nT: int
    m: int
    substeps: int


def make_mesh(system, grid):
    """Uniform mesh whose step divides both h / m and T.

    ``substeps`` is raised to the smallest multiple that makes T a whole
    number of steps; InvalidSystem is raised when none exists.
    """
    for mult in range(1, 65):
        sub = grid.substeps * mult
        nh = grid.m * sub
        dt = system.h / nh
        nT = system.T / dt
        if abs(nT - round(nT)) < 1e-9 * max(1.0, nT):
            return Mesh(dt, nh, int(round(nT)), grid.m, sub)
    raise InvalidSystem("T and h are not commensurate on the delay mesh")


class _Dense:
    """Piecewise cubic Hermite dense output of a lockstep integration."""

    def __init__(self, Y, Fr, Fl, dt):
        self.Y, self.Fr, self.Fl, self.dt = Y, Fr, Fl, dt
        self.nsteps = Y.shape[0] - 1

    def eval(self, member, u):
        x = np.asarray(u, dtype=float) / self.dt
        k = np.clip(np.floor(x).astype(int), 0, self.nsteps - 1)
        s = (x - k)[..., None, None]
        y0 = self.Y[k, member]
        y1 = self.Y[k + 1, member]
        f0 = self.Fr[k, member]
        f1 = self.Fl[k + 1, member]
        s2 = s * s
        h00 = (1 + 2 * s) * (1 - s) ** 2
        h10 = s * (1 - s) ** 2
        h01 = s2 * (3 - 2 * s)
        h11 = s2 * (s - 1)
        return h00 * y0 + h01 * y1 + self.dt * (h10 * f0 + h11 * f1)


def _rk4(coef, y0, hist, nsteps, dt, nh):
    """Lockstep RK4 for a batch of linear DDEs in local time u = k dt.

    coef(j) returns (A0, A1) at local time j * dt / 2. hist(u) returns the
    history at the points u <= 0, shape (len(u),) + y0.shape; it is called
    once. Histories may jump at mesh nodes, so one-sided values are sampled a
    tiny distance inside the relevant interval.
    y0 has shape (B, n, r).
    """
    eps = 1e-9 * dt
    shape = y0.shape
    Y = np.empty((nsteps + 1,) + shape)
    Fr = np.empty_like(Y)
    Fl = np.empty_like(Y)
    Y[0] = y0
    v = np.arange(-nh, 0)
    H = hist(np.concatenate([v * dt + eps, (v + 1) * dt - eps, (v + 0.5) * dt]))
    H_right, H_left, H_mid = H[:nh], H[nh:2 * nh], H[2 * nh:]

    def right(k):
        v = k - nh
        return Y[v] if v >= 0 else H_right[v + nh]

    def left(k):
        v = k - nh
        return Y[v] if v > 0 else H_left[v + nh - 1]

    def mid(k):
        v = k - nh
        if v >= 0:
            return 0.5 * (Y[v] + Y[v + 1]) + 0.125 * dt * (Fr[v] - Fl[v + 1])
        return H_mid[v + nh]

    a0, a1 = coef(0)
    Fr[0] = a0 @ Y[0] + a1 @ right(0)
    Fl[0] = Fr[0]
    for k in range(nsteps):
        b0, b1 = coef(2 * k + 1)
        c0, c1 = coef(2 * k + 2)
        y = Y[k]
        k1 = Fr[k]
        dm = b1 @ mid(k)
        k2 = b0 @ (y + 0.5 * dt * k1) + dm
        k3 = b0 @ (y + 0.5 * dt * k2) + dm
        dl = c1 @ left(k + 1)
        k4 = c0 @ (y + dt * k3) + dl
        Y[k + 1] = y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        Fl[k + 1] = c0 @ Y[k + 1] + dl
        Fr[k + 1] = c0 @ Y[k + 1] + c1 @ right(k + 1)
    if not np.all(np.isfinite(Y)):
        raise NonFiniteState("integration produced non-finite values")
    return _Dense(Y, Fr, Fl, dt)


class Trajectory:
    """Solution of the delay system from an initial state at t0."""

    def __init__(self, system, t0, state, dense, member=0):
        self.system = system
        self.t0 = float(t0)
        self.state = state
        self.dense = dense
        self.member = member
        self.dt = dense.dt
        self.t_end = self.t0 + dense.nsteps * dense.dt

    @property
    def mesh(self):
        return self.t0 + self.dt * np.arange(self.dense.nsteps + 1)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t > self.t_end + 1e-12 * max(1.0, abs(self.t_end))):
            raise OutOfTable("time beyond the integrated horizon")
        out = np.empty(t.shape + (self.system.n,))
        past = t < self.t0
        if np.any(past):
            out[past] = self.state.eval_tail(t[past] - self.t0)
        fut = ~past
        if np.any(fut):
            out[fut] = self.dense.eval(self.member, t[fut] - self.t0)[..., 0]
        return out

    def breakpoints(self):
        """Points where the solution may be nonsmooth."""
        h = self.system.h
        k = np.arange(0, int((self.t_end - self.t0) / h) + 2)
        pts = [self.t0 + k * h]
        for b in self.state.break_points():
            pts.append(self.t0 + b + h * (k + 1))
        pts.append(self.t0 + self.state.break_points())
        return np.sort(np.concatenate(pts))

    def state_at(self, t, m=None):
        """Segment x_t as a HilbertState with an exact tail evaluator."""
        m = self.state.m if m is None else m
        h = self.system.h
        br = self.breakpoints() - t
        br = br[(br > -h) & (br < 0.0)]
        head = self(np.array(t))
        return HilbertState.from_function(head, lambda th: self(t + np.asarray(th)), h, m, breaks=tuple(br))


def _coef_table(system, t0, nhalf, dt):
    times = t0 + 0.5 * dt * np.arange(nhalf + 1)
    return system.A0.eval(times), system.A1.eval(times)


def integrate_batch(system, t0, states, t_end, grid=None, dt=None):
    """Integrate several initial states at the same t0 in lockstep."""
    grid = GridSpec() if grid is None else grid
    h = system.h
    if dt is None:
        dt = h / (states[0].m * grid.substeps)
    nh = int(round(h / dt))
    if abs(nh * dt - h) > 1e-12 * h:
        raise InvalidSystem("dt must divide h")
    nsteps = max(1, int(math.ceil((t_end - t0) / dt - 1e-9)))
    G0, G1 = _coef_table(system, t0, 2 * nsteps + 2, dt)
    coef = lambda j: (G0[j], G1[j])
    y0 = np.stack([s.head for s in states])[:, :, None].astype(float)

    def hist(u):
        return np.stack([s.eval_tail(u) for s in states], axis=1)[..., None]

    dense = _rk4(coef, y0, hist, nsteps, dt, nh)
    return [Trajectory(system, t0, s, dense, member=i) for i, s in enumerate(states)]


def integrate_dde(system, t0, state, t_end, grid=None, dt=None):
    """Solve x' = A0 x + A1 x(t - h) from (t0, state) up to ``t_end``."""
    return integrate_batch(system, t0, [state], t_end, grid, dt)[0]


class FundamentalMatrixTable:
    """Tabulated fundamental matrix K(t, s) of the delay system.

    Columns are integrated from every mesh source s_i in [0, T) over lags
    t - s up to ``periods * T + h``. Queries reduce s modulo T, evaluate each
    column by Hermite interpolation in t, and interpolate across columns with
    4-point Lagrange stencils kept inside the smooth piece between the lines
    s = t - k h.
    """

    def __init__(self, system, grid=None, periods=3):
        self.system = system
        self.grid = GridSpec() if grid is None else grid
        self.mesh = make_mesh(system, self.grid)
        self.periods = periods
        self.max_lag = periods * system.T + system.h
        dt = self.mesh.dt
        self.nsteps = int(math.ceil(self.max_lag / dt)) + 8
        nT = self.mesh.nT
        n = system.n
        G0, G1 = _coef_table(system, 0.0, 2 * (nT + self.nsteps) + 2, dt)
        idx = 2 * np.arange(nT)
        coef = lambda j: (G0[idx + j], G1[idx + j])
        zero = np.zeros((nT, n, n))
        y0 = np.broadcast_to(np.eye(n), (nT, n, n)).copy()
        self.dense = _rk4(coef, y0, lambda u: np.broadcast_to(zero, u.shape + zero.shape), self.nsteps, dt, self.mesh.nh)

    @property
    def dt(self):
        return self.mesh.dt

    @property
    def rule(self):
        return self.grid.quad_rule

    def column(self, i, u):
        """K(s_i + u, s_i) for mesh source index i (any integer)."""
        return self.dense.eval(np.mod(i, self.mesh.nT), u)

    def eval_K(self, t, s):
        """K(t, s) for broadcastable arrays t and s; shape (..., n, n)."""
        t, s = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(s, dtype=float))
        shape = t.shape
        t = t.ravel()
        s = s.ravel()
        n = self.system.n
        out = np.empty((t.size, n, n))
        step = 65536
        for a in range(0, t.size, step):
            out[a:a + step] = self._eval(t[a:a + step], s[a:a + step])
        return out.reshape(shape + (n, n))

    def _eval(self, t, s):
        n = self.system.n
        T, h, dt = self.system.T, self.system.h, self.mesh.dt
        out = np.zeros((t.size, n, n))
        d = t - s
        tol = 1e-12 * np.maximum(1.0, np.abs(t))
        same = np.abs(d) <= tol
        out[same] = np.eye(n)
        act = d > tol
        if np.any(d[act] > self.max_lag * (1 + 1e-12) + 1e-12):
            raise OutOfTable(f"lag t - s exceeds the tabulated range {self.max_lag}")
        if not np.any(act):
            return out
        d = d[act]
        sr = np.mod(s[act], T)
        g = sr / dt
        i0 = np.floor(g)
        frac = g - i0
        up = frac > 1 - 1e-9
        i0[up] += 1
        frac[up] = 0.0
        i0 = i0.astype(int)
        on = frac < 1e-9
        res = np.empty((d.size, n, n))
        if np.any(on):
            res[on] = self.column(i0[on], d[on])
        off = ~on
        if np.any(off):
            dd, ss, ii = d[off], sr[off], i0[off]
            tr = ss + dd
            ks = np.floor(dd / h)
            ilo = np.ceil((tr - (ks + 1) * h) / dt - 1e-9).astype(int)
            ihi = np.floor((tr - ks * h) / dt + 1e-9).astype(int)
            start = np.minimum(np.maximum(ii - 1, ilo), ihi - 3)
            x = ss / dt - start
            lw = np.stack([
                -(x - 1) * (x - 2) * (x - 3) / 6.0,
                x * (x - 2) * (x - 3) / 2.0,
                -x * (x - 1) * (x - 3) / 2.0,
                x * (x - 1) * (x - 2) / 6.0,
            ], axis=1)
            acc = np.zeros((dd.size, n, n))
            for j in range(4):
                ij = start + j
                u = np.maximum(tr - ij * dt, 0.0)
                acc += lw[:, j, None, None] * self.column(ij, u)
            res[off] = acc
        out[act] = res
        return out


def fundamental_matrix(system, grid=None, periods=3):
    """Build the fundamental matrix table."""
    return FundamentalMatrixTable(system, grid, periods)


def cauchy_solution(table, t0, state, t):
    """x(t) from (t0, state) through the Cauchy formula, vectorised over t."""
    system = table.system
    h = system.h
    t = np.atleast_1d(np.asarray(t, dtype=float))
    base = merge_breaks(-h, 0.0, table.dt, state.break_points())
    x, w = split_composite(base, (t - t0 - h)[:, None], h, table.rule)
    src = t0 + h + x
    K = table.eval_K(t[:, None], src)
    A1 = system.A1.eval(src)
    phi = state.eval_tail(x)
    integral = np.einsum("rq,rqij,rqjk,rqk->ri", w, K, A1, phi)
    return np.einsum("rij,j->ri", table.eval_K(t, t0), state.head) + integral


def composition_residual(table, t, xi, s):
    """Max-norm residual of K(t,s) = K(t,xi)K(xi,s) + int K A1 K, per triple."""
    system = table.system
    h = system.h
    t, xi, s = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (t, xi, s))
    base = merge_breaks(-h, 0.0, table.dt)
    offs = np.stack([t - xi, s - xi], axis=1)
    th, w = split_composite(base, offs, h, table.rule)
    src = xi[:, None] + th + h
    left = table.eval_K(t[:, None], src) @ system.A1.eval(src)
    right = table.eval_K(xi[:, None] + th, s[:, None])
    integral = np.einsum("rq,rqij,rqjk->rik", w, left, right)
    lhs = table.eval_K(t, s)
    rhs = table.eval_K(t, xi) @ table.eval_K(xi, s) + integral
    return np.max(np.abs(lhs - rhs), axis=(1, 2))


def dump_K_csv(table, path, t_values, s_values):
    """Write K samples with columns t,s,i,j,value."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "s", "i", "j", "value"])
        for t in t_values:
            for s in s_values:
                K = table.eval_K(t, s)
                for i in range(K.shape[0]):
                    for j in range(K.shape[1]):
                        wr.writerow([repr(float(t)), repr(float(s)), i, j, repr(float(K[i, j]))])
