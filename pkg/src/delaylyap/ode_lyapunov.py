"""Periodic Lyapunov matrices of delay-free periodic systems x' = A0(t) x.

For W(t) > 0 the periodic solution of P' = -A0^T P - P A0 - W is
P(t) = Phi^T(T,t) P0 Phi(T,t) + int_t^T Phi^T(xi,t) W(xi) Phi(xi,t) dxi,
where P0 solves the Stein equation P0 - M^T P0 M = W_T with M = Phi(T, 0).
"""

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteState, SingularStein
from .quadrature import reference_rule
from .stein import stein_residual, stein_solve

log = logging.getLogger(__name__)

SINGULAR_RCOND = 1e-12
COND_WARN = 1e8


class OdeFundamental:
    """Phi(t, 0) of x' = A0(t) x by RK4 with Hermite dense output on [0, T]."""

    def __init__(self, A0, T, steps=512):
        self.A0 = A0
        self.T = float(T)
        self.steps = int(steps)
        n = A0.n
        dt = self.T / self.steps
        self.dt = dt
        A = A0.eval(0.5 * dt * np.arange(2 * self.steps + 1))
        Y = np.empty((self.steps + 1, n, n))
        F = np.empty_like(Y)
        Y[0] = np.eye(n)
        for k in range(self.steps):
            y = Y[k]
            k1 = A[2 * k] @ y
            k2 = A[2 * k + 1] @ (y + 0.5 * dt * k1)
            k3 = A[2 * k + 1] @ (y + 0.5 * dt * k2)
            k4 = A[2 * k + 2] @ (y + dt * k3)
            Y[k + 1] = y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            F[k] = k1
        F[-1] = A[-1] @ Y[-1]
        if not np.all(np.isfinite(Y)):
            raise NonFiniteState("fundamental matrix overflowed")
        self.Y, self.F = Y, F
        self.M = Y[-1].copy()
        cond = np.linalg.cond(Y[-1])
        if cond > COND_WARN:
            log.warning("fundamental matrix condition number %.3g exceeds %.0e", cond, COND_WARN)

    def _local(self, t):
        x = np.asarray(t, dtype=float) / self.dt
        k = np.clip(np.floor(x).astype(int), 0, self.steps - 1)
        s = (x - k)[..., None, None]
        h00 = (1 + 2 * s) * (1 - s) ** 2
        h10 = s * (1 - s) ** 2
        h01 = s * s * (3 - 2 * s)
        h11 = s * s * (s - 1)
        return h00 * self.Y[k] + h01 * self.Y[k + 1] + self.dt * (h10 * self.F[k] + h11 * self.F[k + 1])

    def phi0(self, t):
        """Phi(t, 0) for any real t, using Phi(t + T, 0) = Phi(t, 0) M."""
        t = np.asarray(t, dtype=float)
        q = np.floor(t / self.T)
        r = t - q * self.T
        out = self._local(r)
        for k in np.unique(q):
            sel = q == k
            out[sel] = out[sel] @ np.linalg.matrix_power(self.M, int(k)) if k >= 0 else \
                out[sel] @ np.linalg.matrix_power(np.linalg.inv(self.M), int(-k))
        return out

    def __call__(self, t, s=0.0):
        """Phi(t, s) = Phi(t, 0) Phi(s, 0)^{-1}."""
        t, s = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(s, dtype=float))
        return self.phi0(t) @ np.linalg.inv(self.phi0(s))


def ode_fundamental(A0, T, steps=512):
    return OdeFundamental(A0, T, steps)


def p0_series(M, W_T, tol=1e-15, max_terms=100000):
    """P0 = sum_k (M^T)^k W_T M^k, valid when all |mu| < 1."""
    P = np.zeros_like(W_T)
    term = W_T.copy()
    for _ in range(max_terms):
        P += term
        if np.max(np.abs(term)) <= tol * max(1.0, np.max(np.abs(P))):
            break
        term = M.T @ term @ M
    return P


@dataclass
class OdeLyapunov:
    """Solution of the periodic Lyapunov problem of a delay-free system."""

    phi: OdeFundamental
    W: object
    W_T: np.ndarray
    P0: np.ndarray
    rcond: float
    cumulative: np.ndarray

    @property
    def M(self):
        return self.phi.M

    @property
    def T(self):
        return self.phi.T

    def weight_integral(self, t):
        """C(t) = int_0^t Phi^T(xi,0) W Phi(xi,0) dxi for t in [0, T]."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        dt = self.phi.dt
        k = np.clip(np.floor(t / dt).astype(int), 0, self.phi.steps - 1)
        a = k * dt
        xr, wr = reference_rule("gauss-4")
        x = a[:, None] + (t - a)[:, None] * xr
        w = (t - a)[:, None] * wr
        Ph = self.phi._local(x)
        part = np.einsum("rq,rqji,rqjk,rqkl->ril", w, Ph, self.W.eval(x), Ph)
        return self.cumulative[k] + part

    def P(self, t):
        """Periodic Lyapunov matrix P(t); shape t.shape + (n, n)."""
        t = np.asarray(t, dtype=float)
        r = np.mod(t, self.T).ravel()
        Ph = self.phi._local(r)
        inv = np.linalg.inv(Ph)
        core = self.P0 - self.weight_integral(r)
        out = np.swapaxes(inv, -1, -2) @ core @ inv
        out = 0.5 * (out + np.swapaxes(out, -1, -2))
        return out.reshape(t.shape + self.P0.shape)

    def stein_residual(self):
        return stein_residual(self.M, self.P0, self.W_T)

    def is_positive_definite(self, samples=64):
        ts = np.linspace(0.0, self.T, samples, endpoint=False)
        return bool(np.all(np.linalg.eigvalsh(self.P(ts)) > 0))

    def dump_csv(self, path, t_values):
        """Write P(t) samples with columns t,i,j,value."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t", "i", "j", "value"])
            for t in t_values:
                P = self.P(t)
                for i in range(P.shape[0]):
                    for j in range(P.shape[1]):
                        wr.writerow([repr(float(t)), i, j, repr(float(P[i, j]))])


def _weight_blocks(phi, W):
    """Running integrals of Phi^T W Phi at the step boundaries of ``phi``."""
    dt = phi.dt
    xr, wr = reference_rule("gauss-4")
    x = dt * (np.arange(phi.steps)[:, None] + xr)
    Ph = phi._local(x)
    blocks = np.einsum("q,rqji,rqjk,rqkl->ril", dt * wr, Ph, W.eval(x), Ph)
    return np.concatenate([np.zeros((1,) + blocks.shape[1:]), np.cumsum(blocks, axis=0)])


def assemble_WT(A0, W, T, steps=512):
    """W_T = int_0^T Phi^T(xi, 0) W(xi) Phi(xi, 0) dxi, symmetrised."""
    W_T = _weight_blocks(OdeFundamental(A0, T, steps), W)[-1]
    return 0.5 * (W_T + W_T.T)


def solve_ode_lyapunov(A0, W, T, steps=512):
    """Compute P0 and the periodic P(t) for x' = A0(t) x and weight W(t).

    Raises SingularStein when M has a reciprocal pair of multipliers, detected
    through the reciprocal condition number of the Kronecker operator.
    """
    phi = OdeFundamental(A0, T, steps)
    cumulative = _weight_blocks(phi, W)
    W_T = 0.5 * (cumulative[-1] + cumulative[-1].T)
    P0, rcond = stein_solve(phi.M, W_T)
    if rcond < SINGULAR_RCOND:
        raise SingularStein(f"Stein operator is singular (rcond={rcond:.3g})", rcond)
    P0 = 0.5 * (P0 + P0.T)
    return OdeLyapunov(phi, W, W_T, P0, rcond, cumulative)
