"""Discretised monodromy operator, Floquet multipliers and the Lyapunov condition.

The state (phi0, Phi) is represented by the head and the tail values at the
m + 1 nodes theta_j = -h + j h / m, giving matrices of order n (m + 2).
"""

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import EigenFailure
from .propagation import FundamentalMatrixTable
from .quadrature import PiecewiseLagrange, merge_breaks, split_composite

FLOOR = 1e-6
RECIPROCAL_TOL = 1e-4
MARGIN = 1e-3


def discretize_monodromy(table):
    """Matrix of the period map on (head, tail nodes), order n (m + 2)."""
    system = table.system
    n, T, h, m = system.n, system.T, system.h, table.mesh.m
    nodes = np.linspace(-h, 0.0, m + 1)
    basis = PiecewiseLagrange(-h, h / m, m + 1, degree=3)
    targets = np.concatenate([[T], T + nodes])
    R = targets.size
    out = np.zeros((R, n, m + 2, n))
    fut = targets >= 0.0
    tf = targets[fut]
    # head columns
    out[fut, :, 0, :] = table.eval_K(tf, 0.0)
    # tail columns by product integration of the kernel against the cubic basis
    base = merge_breaks(-h, 0.0, table.dt)
    x, w = split_composite(base, (tf - h)[:, None], h, table.rule)
    src = h + x
    KA = table.eval_K(tf[:, None], src) @ system.A1.eval(src)
    B = basis.matrix(x.ravel()).reshape(x.shape + (m + 1,))
    out[fut, :, 1:, :] = np.einsum("rq,rqij,rqk->rikj", w, KA, B)
    past = ~fut
    if np.any(past):
        # targets still inside the initial segment copy the interpolated tail
        Bp = basis.matrix(targets[past])
        out[past, :, 1:, :] = np.einsum("rk,ij->rikj", Bp, np.eye(n))
    return out.reshape(R * n, (m + 2) * n)


@dataclass
class SpectrumReport:
    """Floquet multipliers above ``floor``, sorted by decreasing modulus."""

    multipliers: np.ndarray
    floor: float
    dimension: int
    margin: float = MARGIN
    all_eigenvalues: np.ndarray = field(default=None, repr=False)

    @property
    def spectral_radius(self):
        return float(np.max(np.abs(self.multipliers))) if self.multipliers.size else 0.0

    @property
    def classification(self):
        r = self.spectral_radius
        if r < 1.0 - self.margin:
            return "stable"
        if r > 1.0 + self.margin:
            return "unstable"
        return "marginal"

    def to_dict(self):
        return {
            "dimension": self.dimension,
            "floor": self.floor,
            "spectral_radius": self.spectral_radius,
            "classification": self.classification,
            "multipliers": [[float(z.real), float(z.imag)] for z in self.multipliers],
        }


def _sort_multipliers(mu):
    order = np.lexsort((mu.imag, mu.real, -np.round(np.abs(mu), 12)))
    return mu[order]


def multipliers_from_matrix(U, floor=FLOOR, margin=MARGIN):
    try:
        ev = sla.eigvals(U, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise EigenFailure(str(exc)) from exc
    ev = _sort_multipliers(ev)
    kept = ev[np.abs(ev) >= floor]
    return SpectrumReport(kept, floor, U.shape[0], margin, ev)


def floquet_spectrum(system, grid=None, floor=FLOOR, table=None, margin=MARGIN):
    """Floquet multipliers of the delay system from its discretised monodromy."""
    if table is None:
        table = FundamentalMatrixTable(system, grid, periods=1)
    return multipliers_from_matrix(discretize_monodromy(table), floor, margin)


@dataclass
class LyapunovConditionReport:
    """Outcome of the reciprocal-pair test mu_i mu_j != 1."""

    holds: bool
    tol: float
    min_gap: float
    pairs: list
    spectrum: SpectrumReport

    def to_dict(self):
        return {
            "holds": self.holds,
            "tol": self.tol,
            "min_gap": self.min_gap,
            "pairs": [
                {"i": i, "j": j, "mu_i": [a.real, a.imag], "mu_j": [b.real, b.imag], "gap": g}
                for i, j, a, b, g in self.pairs
            ],
            "spectrum": self.spectrum.to_dict(),
        }


def lyapunov_condition(spectrum, tol=RECIPROCAL_TOL):
    """Check that no two multipliers (possibly equal) multiply to 1."""
    mu = spectrum.multipliers
    if mu.size == 0:
        return LyapunovConditionReport(True, tol, float("inf"), [], spectrum)
    gap = np.abs(mu[:, None] * mu[None, :] - 1.0)
    iu = np.triu_indices(mu.size)
    g = gap[iu]
    pairs = [
        (int(i), int(j), complex(mu[i]), complex(mu[j]), float(gap[i, j]))
        for i, j in zip(*iu) if gap[i, j] < tol
    ]
    pairs.sort(key=lambda p: p[4])
    return LyapunovConditionReport(not pairs, tol, float(g.min()), pairs, spectrum)


def hausdorff(a, b):
    """Hausdorff distance between two finite point sets of the complex plane."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.size == 0 and b.size == 0:
        return 0.0
    if a.size == 0 or b.size == 0:
        return float("inf")
    d = np.abs(a[:, None] - b[None, :])
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))


def dual_distance(system, grid=None, min_modulus=1e-2):
    """Hausdorff distance between primal and dual multipliers above ``min_modulus``."""
    p = floquet_spectrum(system, grid).multipliers
    d = floquet_spectrum(system.dual(), grid).multipliers
    return hausdorff(p[np.abs(p) >= min_modulus], d[np.abs(d) >= min_modulus])


def dump_spectrum_csv(spectrum, path):
    """Write multipliers with columns re,im,modulus."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["re", "im", "modulus"])
        for z in spectrum.multipliers:
            wr.writerow([repr(float(z.real)), repr(float(z.imag)), repr(float(abs(z)))])
