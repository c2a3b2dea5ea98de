"""Quadrature rules and piecewise Lagrange bases on uniform node sets."""

import numpy as np
from numpy.polynomial.legendre import leggauss

QUAD_RULES = ("composite-gauss-2", "trapezoid")


def reference_rule(rule):
    """Nodes and weights of a rule on the unit interval [0, 1]."""
    if rule == "trapezoid":
        return np.array([0.0, 1.0]), np.array([0.5, 0.5])
    if rule == "composite-gauss-2":
        rule = "gauss-2"
    if rule.startswith("gauss-"):
        x, w = leggauss(int(rule.split("-")[1]))
        return 0.5 * (x + 1.0), 0.5 * w
    raise ValueError(f"unknown quadrature rule {rule!r}")


def composite(breaks, rule):
    """Apply ``rule`` on every interval of the sorted breakpoint array."""
    breaks = np.asarray(breaks, dtype=float)
    xr, wr = reference_rule(rule)
    a = breaks[:-1, None]
    d = np.diff(breaks)[:, None]
    return (a + d * xr).ravel(), (d * wr).ravel()


def merge_breaks(a, b, step, extra=(), tol=1e-12):
    """Uniform mesh on [a, b] with spacing ``step`` plus extra breakpoints."""
    n = max(1, int(round((b - a) / step)))
    pts = np.concatenate([np.linspace(a, b, n + 1), np.asarray(extra, dtype=float)])
    pts = np.sort(pts[(pts >= a) & (pts <= b)])
    keep = np.concatenate([[True], np.diff(pts) > tol * max(1.0, abs(b - a))])
    pts = pts[keep]
    pts[-1] = b
    return pts


def split_composite(base, offsets, period, rule):
    """Per-row composite rule with rows split at shifted lattices.

    Every interval of ``base`` is cut at the points ``offsets[r, i] + k * period``
    that fall inside it, and ``rule`` is applied on each piece. ``period`` must
    not be smaller than the widest base interval, so each offset cuts an
    interval at most once. Returns nodes and weights of shape (R, P).
    """
    base = np.asarray(base, dtype=float)
    offsets = np.atleast_2d(np.asarray(offsets, dtype=float))
    xr, wr = reference_rule(rule)
    left = base[:-1]
    width = np.diff(base)
    rho = np.mod(offsets[:, :, None] - left[None, None, :], period)
    rho = np.where(rho < width, rho, width)
    rho = np.sort(rho, axis=1)
    r = offsets.shape[0]
    zeros = np.zeros((r, 1, left.size))
    cuts = np.concatenate([zeros, rho, np.broadcast_to(width, (r, 1, left.size))], axis=1)
    lo = cuts[:, :-1, :]
    ln = np.diff(cuts, axis=1)
    x = left[None, None, :, None] + lo[..., None] + ln[..., None] * xr
    w = ln[..., None] * wr
    # order by interval so the result is sorted along each row
    x = np.transpose(x, (0, 2, 1, 3)).reshape(r, -1)
    w = np.transpose(w, (0, 2, 1, 3)).reshape(r, -1)
    return x, w


def lagrange_weights(x, nodes):
    """Lagrange cardinal values at ``x`` (shape (N,)) for per-point stencils.

    ``nodes`` has shape (N, k); returns shape (N, k).
    """
    x = np.asarray(x, dtype=float)[:, None]
    k = nodes.shape[1]
    out = np.ones_like(nodes)
    for j in range(k):
        for i in range(k):
            if i != j:
                out[:, j] *= (x[:, 0] - nodes[:, i]) / (nodes[:, j] - nodes[:, i])
    return out


class PiecewiseLagrange:
    """Local Lagrange interpolation on uniform nodes ``a + j * step``.

    Each interval uses ``degree + 1`` consecutive nodes, kept inside the
    segment that contains it. Segments are delimited by ``seg_breaks`` (node
    indices), which lets the basis respect known nonsmooth points.
    """

    def __init__(self, a, step, count, degree=3, seg_breaks=()):
        self.a = float(a)
        self.step = float(step)
        self.count = int(count)
        self.degree = int(degree)
        cuts = sorted({0, self.count - 1, *[int(b) for b in seg_breaks if 0 < b < self.count - 1]})
        self.seg_breaks = np.array(cuts)

    @property
    def nodes(self):
        return self.a + self.step * np.arange(self.count)

    def stencil(self, x):
        """Stencil start indices and stencil sizes for points ``x``."""
        x = np.asarray(x, dtype=float)
        u = (x - self.a) / self.step
        i = np.clip(np.floor(u).astype(int), 0, self.count - 2)
        seg = np.clip(np.searchsorted(self.seg_breaks, i, side="right") - 1, 0, self.seg_breaks.size - 2)
        lo = self.seg_breaks[seg]
        hi = self.seg_breaks[seg + 1]
        k = np.minimum(self.degree, hi - lo)
        start = i - (k - 1) // 2
        start = np.clip(start, lo, hi - k)
        return start, k

    def weights(self, x):
        """Return (idx, val), each of shape (len(x), degree + 1).

        Unused slots of short stencils carry zero weight.
        """
        x = np.atleast_1d(np.asarray(x, dtype=float))
        start, k = self.stencil(x)
        d = self.degree
        idx = start[:, None] + np.arange(d + 1)[None, :]
        val = np.zeros(idx.shape)
        for kk in np.unique(k):
            sel = k == kk
            nodes = self.a + self.step * idx[sel, : kk + 1]
            val[np.ix_(sel, np.arange(kk + 1))] = lagrange_weights(x[sel], nodes)
        idx = np.clip(idx, 0, self.count - 1)
        return idx, val

    def matrix(self, x):
        """Dense interpolation matrix of shape (len(x), count)."""
        idx, val = self.weights(x)
        out = np.zeros((idx.shape[0], self.count))
        np.add.at(out, (np.arange(idx.shape[0])[:, None], idx), val)
        return out

    def interpolate(self, values, x):
        """Interpolate nodal ``values`` (count, ...) at points ``x``."""
        idx, val = self.weights(x)
        values = np.asarray(values)
        return np.einsum("pk,pk...->p...", val, values[idx])
