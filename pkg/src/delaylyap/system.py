"""Periodic delay systems, Hilbert-space states and configuration I/O."""

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
import yaml

from .errors import InvalidSystem, MalformedConfig
from .quadrature import QUAD_RULES, PiecewiseLagrange, composite, merge_breaks


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


class PeriodicMatrixFunction:
    """Matrix function given by a truncated Fourier series of period T.

    F(t) = c0 + sum_k cos_k cos(2 pi k t / T) + sin_k sin(2 pi k t / T).
    Arrays are stored read-only; ``c0`` has shape (n, n) and ``cos``/``sin``
    have shape (H, n, n).
    """

    def __init__(self, period, c0, cos=None, sin=None):
        c0 = np.atleast_2d(np.asarray(c0, dtype=float))
        n = c0.shape[0]
        if c0.shape != (n, n):
            raise InvalidSystem("matrix function must be square")
        cos = np.zeros((0, n, n)) if cos is None else np.asarray(cos, dtype=float).reshape(-1, n, n)
        sin = np.zeros((0, n, n)) if sin is None else np.asarray(sin, dtype=float).reshape(-1, n, n)
        harm = max(cos.shape[0], sin.shape[0])
        cos = np.concatenate([cos, np.zeros((harm - cos.shape[0], n, n))])
        sin = np.concatenate([sin, np.zeros((harm - sin.shape[0], n, n))])
        if not (period > 0 and np.isfinite(period)):
            raise InvalidSystem("period must be positive and finite")
        for arr in (c0, cos, sin):
            if not np.all(np.isfinite(arr)):
                raise InvalidSystem("Fourier coefficients must be finite")
        self.period = float(period)
        self.c0 = _frozen(c0)
        self.cos = _frozen(cos)
        self.sin = _frozen(sin)

    @classmethod
    def constant(cls, mat, period):
        return cls(period, mat)

    @property
    def n(self):
        return self.c0.shape[0]

    @property
    def harmonics(self):
        return self.cos.shape[0]

    def __call__(self, t):
        return self.eval(t)

    def eval(self, t):
        """Evaluate at scalar or array ``t``; result shape t.shape + (n, n)."""
        t = np.asarray(t, dtype=float)
        out = np.broadcast_to(self.c0, t.shape + self.c0.shape).copy()
        if self.harmonics:
            phase = 2.0 * np.pi * np.mod(t, self.period) / self.period
            k = np.arange(1, self.harmonics + 1)
            arg = phase[..., None] * k
            out += np.einsum("...k,kij->...ij", np.cos(arg), self.cos)
            out += np.einsum("...k,kij->...ij", np.sin(arg), self.sin)
        return out

    def transpose(self):
        return PeriodicMatrixFunction(self.period, self.c0.T, self.cos.transpose(0, 2, 1), self.sin.transpose(0, 2, 1))

    def reflect(self, shift=0.0):
        """Return t -> F(shift - t) as a Fourier series."""
        w = 2.0 * np.pi * np.arange(1, self.harmonics + 1) / self.period
        c = np.cos(w * shift)[:, None, None]
        s = np.sin(w * shift)[:, None, None]
        cos = self.cos * c + self.sin * s
        sin = self.cos * s - self.sin * c
        return PeriodicMatrixFunction(self.period, self.c0, cos, sin)

    def is_symmetric(self):
        return all(np.array_equal(a, np.swapaxes(a, -1, -2)) for a in (self.c0, self.cos, self.sin))

    def is_zero(self):
        return not (np.any(self.c0) or np.any(self.cos) or np.any(self.sin))

    def to_entries(self):
        """Row-major list of entry objects as used in configuration files."""
        n = self.n
        out = []
        for i in range(n):
            for j in range(n):
                e = {"c0": float(self.c0[i, j])}
                if self.harmonics:
                    e["cos"] = [float(v) for v in self.cos[:, i, j]]
                    e["sin"] = [float(v) for v in self.sin[:, i, j]]
                out.append(e)
        return out

    def __repr__(self):
        return f"PeriodicMatrixFunction(n={self.n}, period={self.period}, harmonics={self.harmonics})"


@dataclass(frozen=True)
class DelaySystem:
    """x'(t) = A0(t) x(t) + A1(t) x(t - h) with weight W(t), all of period T."""

    n: int
    T: float
    h: float
    A0: PeriodicMatrixFunction
    A1: PeriodicMatrixFunction
    W: PeriodicMatrixFunction

    def __post_init__(self):
        if not (self.h > 0 and np.isfinite(self.h)):
            raise InvalidSystem("delay h must be positive and finite")
        if not (self.T > 0 and np.isfinite(self.T)):
            raise InvalidSystem("period T must be positive and finite")
        if self.T < self.h * (1 - 1e-12):
            raise InvalidSystem("the period T must be at least the delay h")
        for name in ("A0", "A1", "W"):
            f = getattr(self, name)
            if f.n != self.n:
                raise InvalidSystem(f"{name} has dimension {f.n}, expected {self.n}")
            if abs(f.period - self.T) > 1e-12 * self.T:
                raise InvalidSystem(f"{name} period does not match T")
        if not self.W.is_symmetric():
            raise InvalidSystem("W must be symmetric")

    @classmethod
    def from_constant(cls, A0, A1, W, T=1.0, h=1.0):
        A0 = np.atleast_2d(np.asarray(A0, dtype=float))
        n = A0.shape[0]
        mk = lambda M: PeriodicMatrixFunction.constant(np.atleast_2d(np.asarray(M, dtype=float)).reshape(n, n), T)
        return cls(n, float(T), float(h), mk(A0), mk(A1), mk(W))

    def dual(self):
        """Dual system z'(t) = A0^T(-t) z(t) + A1^T(h - t) z(t - h).

        Its multipliers are those of the original system.
        """
        return DelaySystem(
            self.n, self.T, self.h,
            self.A0.transpose().reflect(0.0),
            self.A1.transpose().reflect(self.h),
            self.W.reflect(0.0),
        )

    def with_weight(self, W):
        return DelaySystem(self.n, self.T, self.h, self.A0, self.A1, W)

    def rhs(self, t, x, xd):
        """Right-hand side for state x and delayed state xd."""
        return self.A0.eval(t) @ x + self.A1.eval(t) @ xd


@dataclass(frozen=True)
class GridSpec:
    """Discretisation parameters: tail nodes m, integrator substeps, quadrature."""

    m: int = 32
    substeps: int = 8
    quad_rule: str = "composite-gauss-2"

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 4:
            raise InvalidSystem("grid.m must be an integer >= 4")
        if int(self.substeps) != self.substeps or self.substeps < 1:
            raise InvalidSystem("grid.substeps must be a positive integer")
        if self.quad_rule not in QUAD_RULES:
            raise InvalidSystem(f"grid.quad_rule must be one of {QUAD_RULES}")


@dataclass(frozen=True, eq=False)
class HilbertState:
    """Element (phi0, Phi) of R^n x L2([-h, 0], R^n).

    The tail is stored as samples at the m + 1 uniform nodes of [-h, 0] and is
    read back through piecewise cubic interpolation. An exact evaluator
    ``tail_fn`` can replace interpolation, for instance for trajectory
    segments; ``breaks`` lists points of (-h, 0) where the tail may be
    nonsmooth, so that quadratures can split there.
    """

    head: np.ndarray
    tail: np.ndarray
    h: float
    tail_fn: object = None
    breaks: tuple = field(default=())

    def __post_init__(self):
        head = np.atleast_1d(np.asarray(self.head))
        tail = np.asarray(self.tail)
        if tail.ndim == 1:
            tail = tail[:, None]
        if tail.shape[0] < 5 or tail.shape[1] != head.size:
            raise InvalidSystem("tail must have shape (m + 1, n) with m >= 4")
        object.__setattr__(self, "head", head)
        object.__setattr__(self, "tail", tail)

    @property
    def n(self):
        return self.head.size

    @property
    def m(self):
        return self.tail.shape[0] - 1

    @property
    def nodes(self):
        return np.linspace(-self.h, 0.0, self.m + 1)

    @property
    def basis(self):
        return PiecewiseLagrange(-self.h, self.h / self.m, self.m + 1, degree=3)

    @classmethod
    def from_function(cls, head, fn, h, m, breaks=()):
        """Sample ``fn`` (vectorised over theta) at the tail nodes."""
        nodes = np.linspace(-h, 0.0, m + 1)
        return cls(np.asarray(head, dtype=float), fn(nodes), h, tail_fn=fn, breaks=tuple(breaks))

    @classmethod
    def random(cls, n, h, m, rng):
        """Head uniform in (-1, 1)^n, tail a random cubic polynomial."""
        head = rng.uniform(-1.0, 1.0, n)
        coef = rng.uniform(-1.0, 1.0, (4, n))
        fn = lambda th: np.moveaxis(np.polynomial.polynomial.polyval(np.asarray(th) / h, coef), 0, -1)
        nodes = np.linspace(-h, 0.0, m + 1)
        return cls(head, fn(nodes), h, tail_fn=fn)

    def eval_tail(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self.tail_fn is not None:
            return np.asarray(self.tail_fn(theta)).reshape(theta.shape + (self.n,))
        return self.basis.interpolate(self.tail, theta.ravel()).reshape(theta.shape + (self.n,))

    def break_points(self):
        """Sorted nonsmooth points of the tail inside [-h, 0]."""
        pts = list(self.breaks)
        if self.tail_fn is None:
            pts.extend(self.nodes)
        pts = np.asarray(pts, dtype=float)
        return np.sort(pts[(pts > -self.h) & (pts < 0.0)])

    def quadrature(self, rule="gauss-4", step=None):
        """Nodes and weights on [-h, 0] respecting tail breakpoints."""
        step = self.h / self.m if step is None else step
        br = merge_breaks(-self.h, 0.0, step, self.break_points())
        return composite(br, rule)

    def inner(self, other):
        """L2-type inner product phi0.psi0 + int Phi.Psi over [-h, 0]."""
        extra = np.concatenate([self.break_points(), other.break_points()])
        br = merge_breaks(-self.h, 0.0, self.h / max(self.m, other.m), extra)
        x, w = composite(br, "gauss-4")
        a = self.eval_tail(x)
        b = other.eval_tail(x)
        return np.vdot(self.head, other.head) + np.einsum("q,qi,qi->", w, np.conj(a), b)

    def norm(self):
        return float(np.sqrt(np.real(self.inner(self))))

    def scaled(self, c):
        fn = None if self.tail_fn is None else (lambda th, f=self.tail_fn: c * np.asarray(f(th)))
        return HilbertState(c * self.head, c * self.tail, self.h, tail_fn=fn, breaks=self.breaks)

    def __add__(self, other):
        if self.tail_fn is None and other.tail_fn is None:
            return HilbertState(self.head + other.head, self.tail + other.tail, self.h)
        fn = lambda th: self.eval_tail(th) + other.eval_tail(th)
        return HilbertState(self.head + other.head, self.tail + other.tail, self.h, tail_fn=fn,
                            breaks=tuple(self.break_points()) + tuple(other.break_points()))


# ---------------------------------------------------------------- configuration

_TOP_KEYS = {"n", "T", "h", "A0", "A1", "W", "grid"}
_GRID_KEYS = {"m", "substeps", "quad_rule"}
_ENTRY_KEYS = {"c0", "cos", "sin"}


def _number(v, what):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise MalformedConfig(f"{what} must be a number")
    return float(v)


def _parse_matrix(block, n, T, name):
    if not isinstance(block, list):
        raise MalformedConfig(f"{name} must be a list of entries")
    if len(block) == n and all(isinstance(r, list) for r in block):
        block = [e for row in block for e in row]
    if len(block) != n * n:
        raise MalformedConfig(f"{name} must have {n * n} entries, got {len(block)}")
    entries = []
    for e in block:
        if isinstance(e, (int, float)) and not isinstance(e, bool):
            e = {"c0": e}
        if not isinstance(e, dict):
            raise MalformedConfig(f"{name} entries must be numbers or mappings")
        bad = set(e) - _ENTRY_KEYS
        if bad:
            raise MalformedConfig(f"unknown key(s) {sorted(bad)} in {name} entry")
        c0 = _number(e.get("c0", 0.0), f"{name}.c0")
        cos = e.get("cos", []) or []
        sin = e.get("sin", []) or []
        if not isinstance(cos, list) or not isinstance(sin, list):
            raise MalformedConfig(f"{name} cos/sin must be lists")
        entries.append((c0, [_number(v, f"{name}.cos") for v in cos], [_number(v, f"{name}.sin") for v in sin]))
    harm = max([len(c) for _, c, _ in entries] + [len(s) for _, _, s in entries] + [0])
    c0 = np.zeros((n, n))
    cs = np.zeros((harm, n, n))
    sn = np.zeros((harm, n, n))
    for k, (a, c, s) in enumerate(entries):
        i, j = divmod(k, n)
        c0[i, j] = a
        cs[: len(c), i, j] = c
        sn[: len(s), i, j] = s
    return PeriodicMatrixFunction(T, c0, cs, sn)


def parse_config(text):
    """Parse YAML or JSON text into (DelaySystem, GridSpec)."""
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise MalformedConfig(f"cannot parse configuration: {exc}") from exc
    if not isinstance(data, dict):
        raise MalformedConfig("configuration must be a mapping")
    bad = set(data) - _TOP_KEYS
    if bad:
        raise MalformedConfig(f"unknown key(s) {sorted(bad)}")
    missing = {"n", "T", "h", "A0", "A1", "W"} - set(data)
    if missing:
        raise MalformedConfig(f"missing key(s) {sorted(missing)}")
    n = data["n"]
    if isinstance(n, bool) or not isinstance(n, int) or n < 1:
        raise InvalidSystem("n must be a positive integer")
    T = _number(data["T"], "T")
    h = _number(data["h"], "h")
    if not (T > 0 and np.isfinite(T)) or not (h > 0 and np.isfinite(h)):
        raise InvalidSystem("T and h must be positive and finite")
    A0 = _parse_matrix(data["A0"], n, T, "A0")
    A1 = _parse_matrix(data["A1"], n, T, "A1")
    W = _parse_matrix(data["W"], n, T, "W")
    if not W.is_symmetric():
        raise InvalidSystem("W must be symmetric")
    grid = data.get("grid") or {}
    if not isinstance(grid, dict):
        raise MalformedConfig("grid must be a mapping")
    bad = set(grid) - _GRID_KEYS
    if bad:
        raise MalformedConfig(f"unknown grid key(s) {sorted(bad)}")
    for key in ("m", "substeps"):
        if key in grid and (isinstance(grid[key], bool) or not isinstance(grid[key], int)):
            raise MalformedConfig(f"grid.{key} must be an integer")
    gs = GridSpec(**grid)
    return DelaySystem(n, T, h, A0, A1, W), gs


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def config_dict(system, grid=None):
    d = {
        "n": system.n,
        "T": system.T,
        "h": system.h,
        "A0": system.A0.to_entries(),
        "A1": system.A1.to_entries(),
        "W": system.W.to_entries(),
    }
    if grid is not None:
        d["grid"] = {"m": grid.m, "substeps": grid.substeps, "quad_rule": grid.quad_rule}
    return d


def serialize_config(system, grid=None):
    """YAML text that ``parse_config`` maps back to an equal system."""
    return yaml.safe_dump(config_dict(system, grid), sort_keys=False)


def config_digest(system, grid=None):
    """Stable SHA-256 digest of the canonical configuration."""
    blob = json.dumps(config_dict(system, grid), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def eval_matrix(f, t):
    return f.eval(t)
