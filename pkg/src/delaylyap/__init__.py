"""Delay Lyapunov matrices of linear periodic time-delay systems."""

__version__ = "0.1.0"

from .errors import (
    EigenFailure, InvalidSystem, MalformedConfig, NonFiniteState, NonUniqueLyapunovMatrix,
    OutOfTable, SingularStein, UnsupportedSeparation,
)
from .system import (
    DelaySystem, GridSpec, HilbertState, PeriodicMatrixFunction, config_digest, eval_matrix,
    load_config, parse_config, serialize_config,
)
from .propagation import (
    FundamentalMatrixTable, Trajectory, cauchy_solution, composition_residual, fundamental_matrix,
    integrate_dde,
)
from .monodromy import (
    LyapunovConditionReport, SpectrumReport, discretize_monodromy, dual_distance, floquet_spectrum,
    lyapunov_condition,
)
from .ode_lyapunov import OdeLyapunov, solve_ode_lyapunov
from .delay_lyapunov import DelayLyapunovMatrix, TimeInvariantLyapunov, solve_delay_lyapunov
from .functional import (
    AssembledP0, FunctionalEvaluator, derivative_check, monodromy_image, nonnegativity_probe,
    operator_stein_residual, v0,
)
