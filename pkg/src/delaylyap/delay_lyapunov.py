"""Delay Lyapunov matrix of a periodic delay system via its Fredholm equation.

On [0, h]^2 the matrix U0 solves U0 = L U0 + I_W, where the period operator is
L U(theta, s) = E(theta)^T Y E(s), E stacks K(T, .) and A1(h + xi) K(T + xi, .),
and Y is built from U on the boundary row and the tail. The source term is
I_W(theta, s) = int_max(theta,s)^T K^T(xi, theta) W(xi) K(xi, s) dxi.

The Neumann terms satisfy L^k I_W = int_{kT}^{(k+1)T} K^T W K, so

    U0 = S_p + V_p,  S_p = int_max^{pT} K^T W K,  V_p = L V_p + J_p,

with J_p the integral over [pT, (p+1)T]. S_p carries the diagonal kink of U0
and is computed by quadrature; V_p is smooth and is discretised on a nodal
piecewise polynomial basis. The discrete equation is the Stein equation
X = R^T X R + J_p for the nodal values X of V_p, with R[j, l] = E_j(theta_l).
The same factorisation evaluates the extension of U to [-h, T]^2:

    U(theta, s) = E(theta)^T X E(s) + int_max^{(p+1)T} K^T(tau, theta) W K(tau, s) dtau.
"""

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import NonUniqueLyapunovMatrix, UnsupportedSeparation
from .monodromy import discretize_monodromy, lyapunov_condition, multipliers_from_matrix
from .propagation import FundamentalMatrixTable
from .quadrature import PiecewiseLagrange, merge_breaks, split_composite
from .stein import stein_residual
from .stein import stein_solve
from .system import GridSpec

log = logging.getLogger(__name__)

RCOND_TOL = 1e-10
DEPTH = 2
DEGREE = 5


def _mesh_breaks(lo, hi, dt):
    k0 = int(np.ceil(lo / dt - 1e-9))
    k1 = int(np.floor(hi / dt + 1e-9))
    pts = np.concatenate([[lo], dt * np.arange(k0, k1 + 1), [hi]])
    pts = np.unique(np.clip(pts, lo, hi))
    keep = np.concatenate([[True], np.diff(pts) > 1e-12 * max(1.0, abs(hi))])
    pts = pts[keep]
    pts[-1] = hi
    return pts


def _offsets(values, dt):
    r = np.mod(np.asarray(values, dtype=float), dt)
    r = np.where(r > dt * (1 - 1e-9), 0.0, r)
    r = np.where(r < dt * 1e-9, 0.0, r)
    return np.unique(np.round(r / dt, 12)) * dt


@dataclass
class DelayLyapunovMatrix:
    """Solved delay Lyapunov matrix with its nodal table and extension."""

    system: object
    grid: GridSpec
    table: FundamentalMatrixTable
    basis: PiecewiseLagrange
    depth: int
    X: np.ndarray
    R: np.ndarray
    U0: np.ndarray
    rcond: float
    condition: object
    symmetry_defect: float
    timings: dict = field(default_factory=dict)

    # ------------------------------------------------------------ basics
    @property
    def n(self):
        return self.system.n

    @property
    def nodes(self):
        return self.basis.nodes

    @property
    def m(self):
        return self.grid.m

    def stein_residual(self):
        """Residual of the discrete equation for the smooth part."""
        nodes = self.nodes
        Q = _block(self._J(nodes, nodes, self.depth * self.system.T, (self.depth + 1) * self.system.T))
        return stein_residual(self.R, self.X, Q)

    # ------------------------------------------------------------ kernels
    def E(self, b):
        """Stacked E_j(b), shape (len(b), m + 1, n, n)."""
        return _E(self.table, self.basis, np.atleast_1d(np.asarray(b, dtype=float)))

    def _J(self, b1, b2, lo=None, hi=None):
        """int_{max(lo, b1, b2)}^{hi} K^T(tau, b1) W K(tau, b2) on the grid b1 x b2."""
        hi = (self.depth + 1) * self.system.T if hi is None else hi
        return _J_grid(self.table, np.atleast_1d(b1), np.atleast_1d(b2), lo, hi)

    def _J_pairs(self, b1, b2, hi=None):
        hi = (self.depth + 1) * self.system.T if hi is None else hi
        return _J_pairs(self.table, b1, b2, hi)

    # ------------------------------------------------------------ evaluation
    def _reduce(self, theta, s):
        T, h = self.system.T, self.system.h
        theta = np.asarray(theta, dtype=float)
        s = np.asarray(s, dtype=float)
        if np.any(np.abs(theta - s) > T + h + 1e-12):
            raise UnsupportedSeparation("|theta - s| must not exceed T + h")
        # the factorised formula holds directly on [-T - h, T]^2; shift by a
        # common multiple of T only outside that square
        top = np.maximum(theta, s)
        low = np.minimum(theta, s)
        inside = (top <= T + 1e-12) & (low >= -T - h - 1e-12)
        k = np.ceil((top - T) / T - 1e-12)
        k = np.where(top - k * T > T + 1e-12, k + 1, k)
        k = np.where(inside, 0.0, k)
        return theta - k * T, s - k * T

    def U(self, theta, s):
        """Extended matrix U(theta, s) for paired arrays; shape (..., n, n)."""
        theta, s = np.broadcast_arrays(np.asarray(theta, dtype=float), np.asarray(s, dtype=float))
        shape = theta.shape
        a, b = self._reduce(theta.ravel(), s.ravel())
        Ea = _stack(self.E(a))
        Eb = _stack(self.E(b))
        first = np.einsum("rpi,pq,rqj->rij", Ea, self.X, Eb)
        out = first + self._J_pairs(a, b)
        return out.reshape(shape + (self.n, self.n))

    extend_U = U

    def U_grid(self, thetas, ss):
        """U on the tensor grid thetas x ss with all points in [-T - h, T]."""
        thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
        ss = np.atleast_1d(np.asarray(ss, dtype=float))
        Ea = _stack(self.E(thetas))
        Eb = _stack(self.E(ss))
        first = np.einsum("api,pq,bqj->abij", Ea, self.X, Eb)
        return first + self._J(thetas, ss)

    def U0_at(self, theta, s):
        """U0 on [0, h]^2, returning stored values at node pairs."""
        return self.U(theta, s)

    def column_interp(self, j, p):
        """U0(p, theta_j) by interpolation of the nodal table along column j.

        Stencils do not cross the diagonal node j, where U0 has a kink.
        """
        basis = PiecewiseLagrange(0.0, self.basis.step, self.basis.count, self.basis.degree,
                                  seg_breaks=tuple(self.basis.seg_breaks[1:-1]) + (j,))
        return basis.interpolate(self.U0[:, j], np.atleast_1d(p))

    def G(self, theta, j):
        """G(theta, s_j) from the nodal table and the kernel K, for node index j.

        G(theta, s) = K^T(T, theta) U0(0, s)
                      + int_{-h}^0 K^T(T + tau, theta) A1^T(h + tau) U0(h + tau, s) dtau.
        """
        system, table = self.system, self.table
        T, h = system.T, system.h
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        sj = self.nodes[j]
        base = merge_breaks(-h, 0.0, table.dt, [sj - h])
        x, w = split_composite(base, (theta - T)[:, None], h, "gauss-3")
        K = table.eval_K(T + x, theta[:, None])
        A1 = system.A1.eval(h + x)
        U0c = self.column_interp(j, (h + x).ravel()).reshape(x.shape + (self.n, self.n))
        integral = np.einsum("rq,rqji,rqkj,rqkl->ril", w, K, A1, U0c)
        head = np.swapaxes(table.eval_K(T, theta), -1, -2) @ self.U0[0, j]
        return head + integral

    # ------------------------------------------------------------ property residuals
    def symmetry_residual(self, points):
        """max |U(theta, s)^T - U(s, theta)| over paired sample points."""
        th, s = np.asarray(points, dtype=float).T
        return float(np.max(np.abs(np.swapaxes(self.U(th, s), -1, -2) - self.U(s, th))))

    def periodicity_residual(self, points):
        """max |U(theta, s) - U(theta + T, s + T)| for points in [-h, 0]^2."""
        th, s = np.asarray(points, dtype=float).T
        T = self.system.T
        return float(np.max(np.abs(self.U(th, s) - self.U(th + T, s + T))))

    def pde_residual(self, points, eta):
        """Central-difference residual of the PDE in the first argument.

        d/dtau U(tau, s) = -A0^T(tau) U(tau, s) - A1^T(tau + h) U(tau + h, s), s > tau.
        """
        tau, s = np.asarray(points, dtype=float).T
        h = self.system.h
        U = self.U(np.concatenate([tau + eta, tau - eta, tau, tau + h]), np.tile(s, 4))
        up, dn, mid, sh = np.split(U, 4)
        fd = (up - dn) / (2 * eta)
        A0t = np.swapaxes(self.system.A0.eval(tau), -1, -2)
        A1t = np.swapaxes(self.system.A1.eval(tau + h), -1, -2)
        rhs = -A0t @ mid - A1t @ sh
        return float(np.max(np.abs(fd - rhs)))

    def diagonal_residual(self, taus, eta):
        """Central-difference residual of the ODE satisfied by U(tau, tau)."""
        tau = np.asarray(taus, dtype=float)
        h = self.system.h
        up = self.U(tau + eta, tau + eta)
        dn = self.U(tau - eta, tau - eta)
        fd = (up - dn) / (2 * eta)
        return float(np.max(np.abs(fd - self.diagonal_rhs(tau))))

    def diagonal_rhs(self, tau):
        tau = np.asarray(tau, dtype=float)
        h = self.system.h
        sysm = self.system
        U = self.U(np.concatenate([tau, tau + h, tau]), np.concatenate([tau, tau, tau + h]))
        d, low, up = np.split(U, 3)
        A0 = sysm.A0.eval(tau)
        A1h = sysm.A1.eval(tau + h)
        T_ = lambda a: np.swapaxes(a, -1, -2)
        return -T_(A0) @ d - T_(A1h) @ low - d @ A0 - up @ A1h - sysm.W.eval(tau)

    def dump_csv(self, path):
        """Write the nodal U0 table with columns theta,s,i,j,value."""
        nodes = self.nodes
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh)
            wr.writerow(["theta", "s", "i", "j", "value"])
            for a, th in enumerate(nodes):
                for b, s in enumerate(nodes):
                    for i in range(self.n):
                        for j in range(self.n):
                            wr.writerow([repr(float(th)), repr(float(s)), i, j, repr(float(self.U0[a, b, i, j]))])


def _stack(E):
    """(S, m + 1, n, n) -> (S, (m + 1) n, n) with row index j * n + a."""
    S, J, n, _ = E.shape
    return E.reshape(S, J * n, n)


def _block(J):
    """(A, B, n, n) block grid -> (A n, B n) matrix."""
    A, B, n, _ = J.shape
    return J.transpose(0, 2, 1, 3).reshape(A * n, B * n)


def _unblock(M, n):
    N = M.shape[0] // n
    return M.reshape(N, n, N, n).transpose(0, 2, 1, 3)


def make_basis(system, grid, degree=DEGREE):
    """Nodal basis on [0, h] with segments broken at the lines T - k h."""
    h, T, m = system.h, system.T, grid.m
    step = h / m
    breaks = []
    k = 1
    while T - k * h > 0:
        x = (T - k * h) / step
        if 0 < x < m:
            if abs(x - round(x)) < 1e-9:
                breaks.append(int(round(x)))
            else:
                log.warning("kink line T - %d h is not a node; accuracy is reduced", k)
        k += 1
    return PiecewiseLagrange(0.0, step, m + 1, degree, breaks)


def _E(table, basis, b):
    """E_j(b) = delta_{j0} K(T, b) + int_{-h}^0 l_j(h + xi) A1(h + xi) K(T + xi, b) dxi."""
    system = table.system
    T, h, n = system.T, system.h, system.n
    J = basis.count
    base = merge_breaks(-h, 0.0, table.dt)
    out = np.zeros((b.size, J, n, n))
    step = max(1, 200000 // (4 * base.size))
    for a in range(0, b.size, step):
        bb = b[a:a + step]
        x, w = split_composite(base, (bb - T)[:, None], h, table.rule)
        AK = system.A1.eval(h + x) @ table.eval_K(T + x, bb[:, None])
        idx, val = basis.weights((h + x).ravel())
        S, P = x.shape
        cw = (w.ravel()[:, None] * val)  # (S P, d + 1)
        flat = (np.repeat(np.arange(S), P)[:, None] * J + idx).ravel()
        contrib = (cw[..., None, None] * AK.reshape(S * P, 1, n, n)).reshape(-1, n, n)
        acc = np.empty((S * J, n, n))
        for i in range(n):
            for k in range(n):
                acc[:, i, k] = np.bincount(flat, weights=contrib[:, i, k], minlength=S * J)
        blk = acc.reshape(S, J, n, n)
        blk[:, 0] += table.eval_K(T, bb)
        out[a:a + step] = blk
    return out


def _J_grid(table, b1, b2, lo, hi):
    """Tensor-grid integrals int_{max(lo, b1, b2)}^{hi} K^T(tau, b1) W K(tau, b2)."""
    system = table.system
    n, dt = system.n, table.dt
    allb = np.concatenate([b1, b2])
    start = allb.min() if lo is None else max(lo, allb.min())
    if start >= hi:
        return np.zeros((b1.size, b2.size, n, n))
    offs = _offsets(allb, dt)
    base = _mesh_breaks(start, hi, dt)
    if offs.size > 12:
        # too many distinct offsets for a shared grid: fall back to pairs
        p1, p2 = np.meshgrid(b1, b2, indexing="ij")
        out = _J_pairs(table, p1.ravel(), p2.ravel(), hi, lo)
        return out.reshape(b1.size, b2.size, n, n)
    x, w = split_composite(base, offs[None, :], dt, table.rule)
    x, w = x[0], w[0]
    keep = w > 0
    x, w = x[keep], w[keep]
    Wt = system.W.eval(x)
    K1 = table.eval_K(x[:, None], b1[None, :])  # (P, B1, n, n)
    K2 = table.eval_K(x[:, None], b2[None, :])
    WK2 = np.einsum("q,qjk,qbkl->qjbl", w, Wt, K2)  # (P, n, B2, n)
    A = K1.transpose(0, 2, 1, 3).reshape(x.size * n, b1.size * n)
    B = WK2.reshape(x.size * n, b2.size * n)
    return (A.T @ B).reshape(b1.size, n, b2.size, n).transpose(0, 2, 1, 3)


def _J_pairs(table, b1, b2, hi, lo=None):
    """Pairwise integrals int_{max(lo, b1, b2)}^{hi} K^T(tau, b1) W K(tau, b2)."""
    system = table.system
    n, dt, h = system.n, table.dt, system.h
    b1 = np.asarray(b1, dtype=float).ravel()
    b2 = np.asarray(b2, dtype=float).ravel()
    out = np.zeros((b1.size, n, n))
    top = np.maximum(b1, b2)
    if lo is not None:
        top = np.maximum(top, lo)
    order = np.argsort(top)
    chunk = 64
    for a in range(0, b1.size, chunk):
        sel = order[a:a + chunk]
        start = top[sel].min()
        if start >= hi:
            continue
        base = _mesh_breaks(start, hi, dt)
        offs = np.stack([b1[sel], b2[sel], top[sel]], axis=1)
        x, w = split_composite(base, offs, dt, table.rule)
        w = np.where(x >= top[sel][:, None], w, 0.0)
        K1 = table.eval_K(x, b1[sel][:, None])
        K2 = table.eval_K(x, b2[sel][:, None])
        out[sel] = np.einsum("rq,rqji,rqjk,rqkl->ril", w, K1, system.W.eval(x), K2)
    return out


def solve_delay_lyapunov(system, grid=None, tol=RCOND_TOL, depth=DEPTH, degree=DEGREE, table=None):
    """Solve for the delay Lyapunov matrix of ``system`` with weight W.

    Raises NonUniqueLyapunovMatrix when the discrete operator is singular to
    within ``tol`` (reciprocal condition number); the exception carries the
    Lyapunov-condition report of the discretised spectrum.
    """
    grid = GridSpec() if grid is None else grid
    timings = {}
    t0 = time.perf_counter()
    if table is None or table.periods < depth + 2:
        table = FundamentalMatrixTable(system, grid, periods=depth + 2)
    timings["fundamental"] = time.perf_counter() - t0
    n, T = system.n, system.T
    basis = make_basis(system, grid, degree)
    nodes = basis.nodes

    t0 = time.perf_counter()
    En = _E(table, basis, nodes)  # [l, j] = E_j(theta_l)
    R = En.transpose(1, 2, 0, 3).reshape(basis.count * n, basis.count * n)
    Qp = _block(_J_grid(table, nodes, nodes, depth * T, (depth + 1) * T))
    Sp = _block(_J_grid(table, nodes, nodes, None, depth * T)) if depth > 0 else np.zeros_like(Qp)
    timings["assemble"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    spectrum = multipliers_from_matrix(discretize_monodromy(table))
    condition = lyapunov_condition(spectrum)
    timings["spectrum"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    X, rcond = stein_solve(R, Qp)
    timings["solve"] = time.perf_counter() - t0
    if rcond < tol or not np.all(np.isfinite(X)):
        sig = _sigma_min(R)
        raise NonUniqueLyapunovMatrix(
            f"discrete Lyapunov operator is singular (rcond={rcond:.3g})",
            rcond=rcond, report=condition, sigma_min=sig,
        )
    if not condition.holds:
        log.warning("Lyapunov condition fails on the discretised spectrum (min gap %.3g)", condition.min_gap)
    defect = float(np.max(np.abs(X - X.T)))
    X = 0.5 * (X + X.T)
    U0 = _unblock(X + Sp, n)
    res = DelayLyapunovMatrix(system, grid, table, basis, depth, X, R, U0, rcond, condition, defect, timings)
    return res


def _sigma_min(R):
    """Smallest singular value of X -> X - R^T X R on small problems."""
    N = R.shape[0]
    if N * N > 2500:
        ev = np.linalg.eigvals(R)
        return float(np.min(np.abs(1.0 - ev[:, None] * ev[None, :])))
    from .stein import stein_operator
    return float(sla.svdvals(stein_operator(R))[-1])


def assemble_L(res):
    """Dense discrete period operator on row-major vec of the nodal block grid."""
    return np.kron(res.R.T, res.R.T)


def assemble_IW(res):
    """I_W at node pairs as a block grid (m + 1, m + 1, n, n)."""
    nodes = res.nodes
    return res._J(nodes, nodes, None, res.system.T)


# ---------------------------------------------------------------- oracle

class TimeInvariantLyapunov:
    """Delay Lyapunov matrix of a constant-coefficient system by shooting.

    U(r) = int_0^inf K^T(t) W K(t + r) dt satisfies U'(r) = U(r) A0 + U(r - h) A1
    for r >= 0, U(-r) = U(r)^T and the algebraic condition
    U(0) A0 + A0^T U(0) + U(h)^T A1 + A1^T U(h) = -W. With Y(r) = U(r) and
    Z(r) = U(r - h) on [0, h] this is a linear two-point problem solved
    with a matrix exponential.
    """

    def __init__(self, A0, A1, W, h):
        A0, A1, W = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (A0, A1, W))
        n = A0.shape[0]
        I = np.eye(n)
        self.n, self.h = n, float(h)
        # row-major vec: vec(Y A) = (I kron A^T) vec(Y), vec(A Y) = (A kron I) vec(Y)
        L = np.block([
            [np.kron(I, A0.T), np.kron(I, A1.T)],
            [-np.kron(A1.T, I), -np.kron(A0.T, I)],
        ])
        self.L = L
        E = sla.expm(L * self.h)
        N = n * n
        # Y(0) - Z(h) = 0
        bc1 = np.hstack([np.eye(N), np.zeros((N, N))]) - E[N:, :]
        # algebraic condition; vec(Z0^T) uses a permutation
        P = np.zeros((N, N))
        for i in range(n):
            for j in range(n):
                P[i * n + j, j * n + i] = 1.0
        bc2 = np.hstack([np.kron(I, A0.T) + np.kron(A0.T, I), np.kron(I, A1.T) + np.kron(A1.T, I) @ P])
        rhs = np.concatenate([np.zeros(N), -W.reshape(-1)])
        self.v0 = np.linalg.solve(np.vstack([bc1, bc2]), rhs)

    def __call__(self, r):
        """U(r) for |r| <= h."""
        r = float(r)
        n = self.n
        if r < 0:
            return self(-r).T
        v = sla.expm(self.L * r) @ self.v0
        return v[: n * n].reshape(n, n)

    def U0(self, theta, s):
        """Matrix in the (theta, s) convention: U(s - theta)^T for s >= theta."""
        return self(s - theta).T
