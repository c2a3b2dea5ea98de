"""Command-line interface.

Subcommands: spectrum, lyapcond, lyapmat, ode-lyap, functional, verify.
Exit codes: 0 success, 1 usage or configuration error, 2 Lyapunov condition
failure or singular equation, 3 verification failure.
"""

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .delay_lyapunov import RCOND_TOL, solve_delay_lyapunov
from .errors import (
    EigenFailure, InvalidSystem, MalformedConfig, NonFiniteState, NonUniqueLyapunovMatrix,
    OutOfTable, SingularStein,
)
from .functional import AssembledP0, derivative_check, operator_stein_residual, v0
from .monodromy import (
    FLOOR, RECIPROCAL_TOL, dual_distance, dump_spectrum_csv, floquet_spectrum, lyapunov_condition,
)
from .ode_lyapunov import solve_ode_lyapunov
from .propagation import composition_residual, dump_K_csv
from .system import GridSpec, HilbertState, config_digest, load_config

EXIT_OK, EXIT_USAGE, EXIT_CONDITION, EXIT_VERIFY = 0, 1, 2, 3

log = logging.getLogger("delaylyap")


@dataclass
class RunReport:
    command: str
    config_digest: str
    grid: dict
    seed: int
    status: str = "ok"
    exit_code: int = EXIT_OK
    timings: dict = field(default_factory=dict)
    results: dict = field(default_factory=dict)
    version: str = __version__

    def write(self, out):
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, "report.json"), "w", encoding="utf-8") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True, default=_jsonable)


def _jsonable(obj):
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serialisable: {type(obj)}")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def build_parser():
    p = _Parser(prog="delaylyap", description="Delay Lyapunov matrices of periodic time-delay systems")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_ in [
        ("spectrum", "Floquet multipliers of the discretised monodromy operator"),
        ("lyapcond", "check the Lyapunov condition mu_i mu_j != 1"),
        ("lyapmat", "solve for the delay Lyapunov matrix"),
        ("ode-lyap", "periodic Lyapunov matrix of the delay-free part"),
        ("functional", "evaluate v0 on random states"),
        ("verify", "run the residual suite"),
    ]:
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", required=True, help="YAML or JSON system description")
        s.add_argument("--out", default=None, help="output directory (default: no files)")
        s.add_argument("--grid-m", type=int, default=None, help="tail nodes m (overrides config)")
        s.add_argument("--substeps", type=int, default=None, help="integrator substeps per tail interval")
        s.add_argument("--tol", type=float, default=None, help="tolerance of the subcommand's main test")
        s.add_argument("--floor", type=float, default=FLOOR, help="discard multipliers below this modulus")
        s.add_argument("--seed", type=int, default=0, help="seed for random states")
        s.add_argument("--trials", type=int, default=5, help="number of random states")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def _grid(args, grid):
    kw = {"m": grid.m, "substeps": grid.substeps, "quad_rule": grid.quad_rule}
    if args.grid_m is not None:
        kw["m"] = args.grid_m
    if args.substeps is not None:
        kw["substeps"] = args.substeps
    return GridSpec(**kw)


def _random_states(system, grid, args):
    rng = np.random.default_rng(args.seed)
    return [HilbertState.random(system.n, system.h, grid.m, rng) for _ in range(args.trials)], rng


def _timed(report, key, fn, *a, **kw):
    t0 = time.perf_counter()
    out = fn(*a, **kw)
    report.timings[key] = 1e3 * (time.perf_counter() - t0)
    return out


def cmd_spectrum(system, grid, args, report):
    sp = _timed(report, "spectrum", floquet_spectrum, system, grid, args.floor)
    report.results = sp.to_dict()
    print(f"spectral radius {sp.spectral_radius:.10g} ({sp.classification}), "
          f"{sp.multipliers.size} multipliers above {args.floor:g}")
    for z in sp.multipliers[:10]:
        print(f"  {z.real:+.10f} {z.imag:+.10f}i  |mu| = {abs(z):.10f}")
    if args.out:
        dump_spectrum_csv(sp, os.path.join(args.out, "spectrum.csv"))
    return EXIT_OK


def cmd_lyapcond(system, grid, args, report):
    tol = RECIPROCAL_TOL if args.tol is None else args.tol
    sp = _timed(report, "spectrum", floquet_spectrum, system, grid, args.floor)
    cond = lyapunov_condition(sp, tol)
    report.results = cond.to_dict()
    print(f"Lyapunov condition {'holds' if cond.holds else 'FAILS'} (min |mu_i mu_j - 1| = {cond.min_gap:.3e})")
    for i, j, a, b, g in cond.pairs[:5]:
        print(f"  pair ({i}, {j}): {a:.8f} * {b:.8f}, gap {g:.3e}")
    return EXIT_OK if cond.holds else EXIT_CONDITION


def _property_points(system, rng, count=20):
    T, h = system.T, system.h
    pairs = rng.uniform(-h, 0.0, (count, 2))
    pde = []
    while len(pde) < count:
        tau = rng.uniform(-0.9 * h, T - 1.1 * h)
        s = rng.uniform(tau + 0.05 * h, T)
        if abs((s - tau) / h - round((s - tau) / h)) > 0.05:
            pde.append((tau, s))
    taus = rng.uniform(-0.95 * h, T - 1.05 * h, count)
    return pairs, np.array(pde), taus


def property_residuals(res, rng):
    """Residuals of symmetry, periodicity, the PDE and the diagonal ODE."""
    pairs, pde, taus = _property_points(res.system, rng)
    eta = res.system.h / (4 * res.grid.m)
    return {
        "symmetry": res.symmetry_residual(pairs),
        "periodicity": res.periodicity_residual(pairs),
        "pde": res.pde_residual(pde, eta),
        "diagonal": res.diagonal_residual(taus, eta),
    }


def cmd_lyapmat(system, grid, args, report):
    tol = RCOND_TOL if args.tol is None else args.tol
    res = _timed(report, "solve", solve_delay_lyapunov, system, grid, tol)
    report.timings.update({f"solve.{k}": 1e3 * v for k, v in res.timings.items()})
    props = property_residuals(res, np.random.default_rng(args.seed))
    report.results = {
        "rcond": res.rcond,
        "symmetry_defect": res.symmetry_defect,
        "stein_residual": res.stein_residual(),
        "U0_00": res.U0[0, 0].tolist(),
        "condition_holds": res.condition.holds,
        "properties": props,
    }
    print(f"rcond {res.rcond:.3e}, U0(0,0) = {np.array2string(res.U0[0, 0], precision=10)}")
    for k, v in props.items():
        print(f"  {k} residual {v:.3e}")
    if args.out:
        res.dump_csv(os.path.join(args.out, "U0.csv"))
        ts = np.linspace(0.0, system.T + system.h, 9)
        dump_K_csv(res.table, os.path.join(args.out, "K.csv"), ts, np.linspace(0.0, system.h, 5))
    return EXIT_OK


def cmd_ode_lyap(system, grid, args, report):
    if not system.A1.is_zero():
        log.warning("A1 is ignored: the delay-free part x' = A0(t) x is used")
    ode = _timed(report, "solve", solve_ode_lyapunov, system.A0, system.W, system.T, grid.m * grid.substeps)
    ts = np.linspace(0.0, system.T, 2 * grid.m + 1)
    report.results = {
        "P0": ode.P0.tolist(),
        "rcond": ode.rcond,
        "stein_residual": ode.stein_residual(),
        "positive_definite": ode.is_positive_definite(),
        "multipliers": [complex(z) for z in np.linalg.eigvals(ode.M)],
    }
    print(f"P0 = {np.array2string(ode.P0, precision=10)}, positive definite: {ode.is_positive_definite()}")
    if args.out:
        ode.dump_csv(os.path.join(args.out, "P.csv"), ts)
    return EXIT_OK


def cmd_functional(system, grid, args, report):
    res = _timed(report, "solve", solve_delay_lyapunov, system, grid)
    states, rng = _random_states(system, grid, args)
    P0 = AssembledP0(res)
    vals = []
    t0 = time.perf_counter()
    for s in states:
        t = float(rng.uniform(0.0, system.T))
        vals.append({"t": t, "v0": v0(res, t, s), "P0_form": P0.quadratic(s), "norm2": s.inner(s).real})
    report.timings["functional"] = 1e3 * (time.perf_counter() - t0)
    report.results = {"values": vals}
    for v in vals:
        print(f"t = {v['t']:.6f}: v0 = {v['v0']:.12g}, <phi,P0 phi> = {v['P0_form']:.12g}")
    if args.out and states:
        rep = derivative_check(res, states[0], rng, windows=5, points=5)
        rep.dump_csv(os.path.join(args.out, "derivative_check.csv"))
        report.results["derivative_check"] = {"integrated": rep.max_integrated, "pointwise": rep.max_pointwise}
    return EXIT_OK


def cmd_verify(system, grid, args, report):
    tol = 1e-5 if args.tol is None else args.tol
    res = _timed(report, "solve", solve_delay_lyapunov, system, grid)
    rng = np.random.default_rng(args.seed)
    T, h = system.T, system.h
    t0 = time.perf_counter()
    props = property_residuals(res, rng)
    s_ = rng.uniform(0.0, T, 100)
    xi = s_ + rng.uniform(0.0, h, 100)
    t_ = xi + rng.uniform(0.0, T, 100)
    states = [HilbertState.random(system.n, h, grid.m, rng) for _ in range(args.trials)]
    checks = {
        "symmetry": (props["symmetry"], 1e-8),
        "periodicity": (props["periodicity"], 1e-6),
        "pde": (props["pde"], 100 * tol),
        "diagonal": (props["diagonal"], 100 * tol),
        "composition": (float(np.max(composition_residual(res.table, t_, xi, s_))), 1e-4),
        "stein": (res.stein_residual(), 1e-10),
        "dual_spectrum": (dual_distance(system, grid), 1e-3),
    }
    if states:
        checks["operator_stein"] = (max(operator_stein_residual(res, st) for st in states), 1e-4)
        rep = derivative_check(res, states[0], rng, windows=5, points=5)
        checks["derivative_integrated"] = (rep.max_integrated, tol)
        checks["derivative_pointwise"] = (rep.max_pointwise, 10 * tol)
        if args.out:
            rep.dump_csv(os.path.join(args.out, "derivative_check.csv"))
    report.timings["checks"] = 1e3 * (time.perf_counter() - t0)
    failed = []
    for name, (val, lim) in checks.items():
        passed = bool(val < lim)
        if not passed:
            failed.append(name)
        report.results[name] = {"value": val, "limit": lim, "pass": passed}
        print(f"{'PASS' if passed else 'FAIL'} {name}: {val:.3e} (limit {lim:.1e})")
    if failed:
        print("failed checks: " + ", ".join(failed), file=sys.stderr)
    if args.out:
        with open(os.path.join(args.out, "verify.csv"), "w", encoding="utf-8") as fh:
            fh.write("check,value,limit,pass\n")
            for name, (val, lim) in checks.items():
                fh.write(f"{name},{val:.6e},{lim:.1e},{int(val < lim)}\n")
    return EXIT_VERIFY if failed else EXIT_OK


COMMANDS = {
    "spectrum": cmd_spectrum,
    "lyapcond": cmd_lyapcond,
    "lyapmat": cmd_lyapmat,
    "ode-lyap": cmd_ode_lyap,
    "functional": cmd_functional,
    "verify": cmd_verify,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        system, grid = load_config(args.config)
        grid = _grid(args, grid)
    except (MalformedConfig, InvalidSystem, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.out:
        os.makedirs(args.out, exist_ok=True)
    report = RunReport(args.command, config_digest(system, grid), asdict(grid), args.seed)
    t0 = time.perf_counter()
    try:
        code = COMMANDS[args.command](system, grid, args, report)
    except (NonUniqueLyapunovMatrix, SingularStein) as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_CONDITION
        report.status = type(exc).__name__
        rep = getattr(exc, "report", None)
        report.results = {"rcond": exc.rcond, "condition": rep.to_dict() if rep is not None else None}
    except InvalidSystem as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_USAGE
        report.status = "InvalidSystem"
    except (NonFiniteState, OutOfTable, EigenFailure) as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_VERIFY
        report.status = type(exc).__name__
    report.timings["total"] = 1e3 * (time.perf_counter() - t0)
    report.exit_code = code
    if code != EXIT_OK and report.status == "ok":
        report.status = "failed"
    if args.out:
        report.write(args.out)
    return code


if __name__ == "__main__":
    sys.exit(main())
