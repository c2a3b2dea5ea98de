"""Discrete Stein equation X = R^T X R + Q with conditioning estimates."""

import warnings

import numpy as np
import scipy.linalg as sla
from scipy.sparse.linalg import LinearOperator, onenormest

DENSE_LIMIT = 4500


def _gecon(lu, anorm):
    rc, info = sla.lapack.dgecon(lu, anorm, norm="I")
    return float(rc)


def stein_operator(R):
    """Dense matrix of X -> X - R^T X R on row-major vec(X)."""
    N = R.shape[0]
    return np.eye(N * N) - np.kron(R.T, R.T)


def stein_solve(R, Q, dense_limit=DENSE_LIMIT):
    """Solve X = R^T X R + Q. Returns (X, rcond).

    rcond is the LAPACK reciprocal condition estimate of the Kronecker operator
    in the infinity norm, which on nodal values approximates the sup norm of
    the underlying functions. Large operators use an estimate built from
    ``onenormest`` applied to the transpose.
    """
    R = np.asarray(R, dtype=float)
    Q = np.asarray(Q, dtype=float)
    N = R.shape[0]
    if N * N <= dense_limit:
        A = stein_operator(R)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            lu, piv = sla.lu_factor(A, check_finite=False)
        rcond = _gecon(lu, np.linalg.norm(A, np.inf))
        if not np.isfinite(rcond) or rcond == 0.0:
            return np.full_like(Q, np.nan), 0.0
        X = sla.lu_solve((lu, piv), Q.reshape(-1), check_finite=False).reshape(N, N)
        return X, rcond
    X = sla.solve_discrete_lyapunov(R.T, Q)
    return X, stein_rcond_estimate(R)


def stein_rcond_estimate(R):
    """Infinity-norm reciprocal condition estimate without forming the operator."""
    N = R.shape[0]
    Rt = R.T

    def fwd(v):
        X = v.reshape(N, N)
        return (X - Rt @ X @ R).reshape(-1)

    def fwd_t(v):
        X = v.reshape(N, N)
        return (X - R @ X @ Rt).reshape(-1)

    def inv(v):
        return sla.solve_discrete_lyapunov(Rt, v.reshape(N, N)).reshape(-1)

    def inv_t(v):
        return sla.solve_discrete_lyapunov(R, v.reshape(N, N)).reshape(-1)

    def op(f, ft):
        return LinearOperator((N * N, N * N), matvec=lambda v: f(np.ravel(v)),
                              rmatvec=lambda v: ft(np.ravel(v)), dtype=float)

    try:
        a = onenormest(op(fwd_t, fwd))
        b = onenormest(op(inv_t, inv))
    except (np.linalg.LinAlgError, ValueError):
        return 0.0
    if not np.isfinite(b) or b == 0:
        return 0.0
    return float(1.0 / (a * b))


def stein_residual(R, X, Q):
    """Max-norm residual of X - R^T X R - Q."""
    return float(np.max(np.abs(X - R.T @ X @ R - Q)))
