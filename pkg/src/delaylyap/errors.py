"""Exception types shared across the package."""


class MalformedConfig(ValueError):
    """The configuration text cannot be parsed or violates the schema."""


class InvalidSystem(ValueError):
    """The configuration parses but does not describe a usable system."""


class NonFiniteState(ArithmeticError):
    """An integration produced NaN or infinite values."""


class OutOfTable(ValueError):
    """A fundamental matrix query falls outside the tabulated range."""


class EigenFailure(RuntimeError):
    """The dense eigenvalue solver did not converge."""


class UnsupportedSeparation(ValueError):
    """The two arguments of the extended Lyapunov matrix are too far apart."""


class SingularStein(ArithmeticError):
    """The discrete Stein equation is numerically singular."""

    def __init__(self, message, rcond=None):
        super().__init__(message)
        self.rcond = rcond


class NonUniqueLyapunovMatrix(ArithmeticError):
    """The Lyapunov condition fails and the matrix is not unique.

    ``report`` holds the LyapunovConditionReport that triggered the failure
    and ``rcond`` the reciprocal condition estimate of the discrete operator.
    """

    def __init__(self, message, rcond=None, report=None, sigma_min=None):
        super().__init__(message)
        self.rcond = rcond
        self.report = report
        self.sigma_min = sigma_min
