import numpy as np
import pytest

from delaylyap.quadrature import PiecewiseLagrange, composite, merge_breaks, split_composite


@pytest.mark.parametrize("rule,exact_deg", [("composite-gauss-2", 3), ("trapezoid", 1)])
def test_composite_exactness(rule, exact_deg):
    x, w = composite(np.linspace(0, 2, 5), rule)
    f = x ** exact_deg
    assert abs(np.sum(w * f) - 2 ** (exact_deg + 1) / (exact_deg + 1)) < 1e-13


def test_composite_kink():
    x, w = composite(merge_breaks(-1.0, 1.0, 0.25, extra=[0.1]), "composite-gauss-2")
    assert abs(np.sum(w * np.abs(x - 0.1)) - (1.1 ** 2 + 0.9 ** 2) / 2) < 1e-13


def test_split_composite_period():
    base = np.linspace(0.0, 1.0, 5)
    x, w = split_composite(base, np.array([[0.3], [0.55]]), 1.0, "composite-gauss-2")
    for r, c in enumerate([0.3, 0.55]):
        assert abs(np.sum(w[r] * np.abs(x[r] - c)) - (c ** 2 + (1 - c) ** 2) / 2) < 1e-13


def test_piecewise_lagrange_cubic_exact():
    pl = PiecewiseLagrange(-1.0, 0.125, 16, degree=3)
    x = np.linspace(-1, 1, 41)
    assert np.max(np.abs(pl.interpolate(pl.nodes ** 3, x) - x ** 3)) < 1e-13
    vals = np.sin(pl.nodes)
    assert np.allclose(pl.matrix(x) @ vals, pl.interpolate(vals, x), atol=1e-14)


def test_piecewise_lagrange_respects_break():
    pl = PiecewiseLagrange(0.0, 0.1, 10, degree=3, seg_breaks=(5,))
    f = np.abs(pl.nodes - 0.5)
    x = np.linspace(0, 1, 23)
    assert np.max(np.abs(pl.interpolate(f, x) - np.abs(x - 0.5))) < 1e-13
