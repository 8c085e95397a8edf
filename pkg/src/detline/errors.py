"""Exception types shared across the package."""


class DetlineError(Exception):
    """Base class for all computational errors raised by detline."""


class SingularMatrix(DetlineError):
    """A pivot underflowed the singularity threshold during factorization."""


class StepUnderflow(DetlineError):
    """The adaptive integrator could not satisfy the tolerance with h above the floor."""


class NoConvergence(DetlineError):
    """Adaptive quadrature hit its subdivision limit before reaching the tolerance."""


class OverflowRisk(DetlineError):
    """Entries of the propagated matrix approached the double-precision ceiling."""

    def __init__(self, message, x=None):
        super().__init__(message)
        self.x = x


class OrderTooLow(DetlineError):
    """Operation requires order >= 2 (resolvent not trace class for order 1)."""


class SingularLeadingCoefficient(DetlineError):
    """Leading coefficient a_n(x) is numerically singular at some grid point."""


class IllConditioned(DetlineError):
    """Least-squares design matrix condition number exceeded the configured cap."""


class WindowTooSmall(DetlineError):
    """Usable sampling window spans too few decades for a trustworthy fit."""


class NotAdmissible(DetlineError):
    """Problem fails an admissibility requirement (sector check, vanishing pencil...)."""


class CaseNotCovered(DetlineError):
    """Boundary blocks fall outside the closed-form case table."""


class UnknownCase(DetlineError):
    """Requested closed-form registry entry does not exist."""


class MissedRoots(DetlineError):
    """Root count from the boundary argument test disagrees with located roots."""


class TailMisfit(DetlineError):
    """Eigenvalue tail model residual exceeded its threshold."""


class ConfigError(DetlineError):
    """Base class for configuration diagnostics."""

    def __init__(self, message, key=None, position=None):
        super().__init__(message)
        self.key = key
        self.position = position


class ParseError(ConfigError):
    """Malformed configuration document or expression text."""


class ShapeError(ConfigError):
    """An array in the configuration has the wrong dimensions."""


class ExprError(ConfigError):
    """An expression failed to parse or evaluate on the problem interval."""
