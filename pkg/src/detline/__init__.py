"""detline: zeta-regularized determinants of 1-d elliptic boundary value problems.

The library computes det R(z) = det(R_a + R_b * phi(b; l+z)) along the
positive real axis, extracts the normalization constant from the fitted
asymptotic expansion, and assembles the regularized determinant together
with independent spectral cross-checks.
"""

from .errors import (
    CaseNotCovered,
    ConfigError,
    DetlineError,
    ExprError,
    IllConditioned,
    MissedRoots,
    NoConvergence,
    NotAdmissible,
    OrderTooLow,
    OverflowRisk,
    ParseError,
    ShapeError,
    SingularLeadingCoefficient,
    SingularMatrix,
    StepUnderflow,
    TailMisfit,
    UnknownCase,
    WindowTooSmall,
)

__version__ = "0.1.0"
