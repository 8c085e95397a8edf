"""Problem model: differential operator, boundary matrices, and angle checks.

The operator is ``l = sum_k a_k(x) D^k`` with ``D = -i d/dx`` and matrix
coefficients ``a_k: [a, b] -> M(m, C)``.  Internally everything uses this
D-convention; conversion from d/dx-coefficients ``b_k`` is ``a_k = i^k b_k``
and is done by the config layer.

Instances are immutable after construction and coefficient callables must be
safe to evaluate concurrently; all operations here are pure.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import NotAdmissible, SingularLeadingCoefficient
from .numcore import as_cmatrix

__all__ = [
    "EllipticOperator",
    "BoundaryCondition",
    "PrincipalAngle",
    "companion_matrix",
    "companion_parts",
    "check_ellipticity",
    "check_sector",
    "rotate_to_pi",
]

_DET_FLOOR = 1e-12


def _coerce_coefficient(spec, m: int):
    """Normalize a coefficient spec to (callable x -> (m, m) array, is_constant)."""
    if spec is None:
        zero = np.zeros((m, m), dtype=complex)
        return (lambda x: zero), True
    if callable(spec):
        def wrapped(x, _f=spec):
            v = _f(x)
            v = np.asarray(v, dtype=complex)
            if v.ndim == 0:
                return np.eye(m, dtype=complex) * v
            return v
        return wrapped, False
    v = np.asarray(spec, dtype=complex)
    if v.ndim == 0:
        const = np.eye(m, dtype=complex) * complex(v)
    else:
        const = as_cmatrix(v, m, m)
    return (lambda x: const), True


@dataclass(frozen=True)
class EllipticOperator:
    """Order-n operator on [a, b] with m x m coefficient matrices.

    ``coeffs[k]`` evaluates a_k(x); entries may be passed to the constructor
    as None (zero), scalars, constant matrices, or callables.
    """

    n: int
    m: int
    a: float
    b: float
    coeffs: tuple = field(repr=False)

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ValueError("order and dimension must be >= 1")
        if not self.b > self.a:
            raise ValueError("interval must satisfy b > a")
        if len(self.coeffs) != self.n + 1:
            raise ValueError(f"need {self.n + 1} coefficients, got {len(self.coeffs)}")
        coerced = [_coerce_coefficient(c, self.m) for c in self.coeffs]
        object.__setattr__(self, "coeffs", tuple(f for f, _ in coerced))
        object.__setattr__(self, "all_constant", all(c for _, c in coerced))
        object.__setattr__(self, "_part_cache", {})
        # finiteness probe; ellipticity itself is checked by check_ellipticity
        for x in np.linspace(self.a, self.b, 9):
            for k in range(self.n + 1):
                v = self.coeff(k, float(x))
                if not np.all(np.isfinite(v.view(float))):
                    raise ValueError(f"a_{k}({x}) has non-finite entries")

    def coeff(self, k: int, x: float) -> np.ndarray:
        """Evaluate a_k(x) as an (m, m) complex array."""
        return np.asarray(self.coeffs[k](x), dtype=complex).reshape(self.m, self.m)

    def alpha(self, k: int, x: float) -> np.ndarray:
        """alpha_k = (-i)^k a_k."""
        return (-1j) ** k * self.coeff(k, x)

    @property
    def size(self) -> int:
        """Dimension n*m of the companion first-order system."""
        return self.n * self.m

    @property
    def length(self) -> float:
        return self.b - self.a

    def shifted(self, z0: complex) -> "EllipticOperator":
        """Operator l + z0 (constant added to a_0)."""
        if self.all_constant:
            new0 = self.coeff(0, self.a) + np.eye(self.m, dtype=complex) * complex(z0)
            specs = (new0,) + tuple(self.coeff(k, self.a) for k in range(1, self.n + 1))
            return EllipticOperator(self.n, self.m, self.a, self.b, specs)
        base = self.coeffs[0]
        shift = np.eye(self.m, dtype=complex) * complex(z0)
        new0 = lambda x: base(x) + shift
        return EllipticOperator(self.n, self.m, self.a, self.b,
                                (new0,) + self.coeffs[1:])

    def scaled(self, factor: complex) -> "EllipticOperator":
        """Operator factor * l (every coefficient multiplied by factor)."""
        fac = complex(factor)
        if self.all_constant:
            specs = tuple(fac * self.coeff(k, self.a) for k in range(self.n + 1))
            return EllipticOperator(self.n, self.m, self.a, self.b, specs)
        new = tuple((lambda x, _c=c: fac * _c(x)) for c in self.coeffs)
        return EllipticOperator(self.n, self.m, self.a, self.b, new)


@dataclass(frozen=True)
class BoundaryCondition:
    """Pair of nm x nm matrices (R_a, R_b) imposing R_a F(a) + R_b F(b) = 0."""

    Ra: np.ndarray
    Rb: np.ndarray

    def __post_init__(self):
        ra = as_cmatrix(self.Ra)
        if ra.shape[0] != ra.shape[1]:
            raise ValueError("Ra must be square")
        rb = as_cmatrix(self.Rb, *ra.shape)
        object.__setattr__(self, "Ra", ra)
        object.__setattr__(self, "Rb", rb)

    @property
    def size(self) -> int:
        return self.Ra.shape[0]


@dataclass(frozen=True)
class PrincipalAngle:
    """Ray direction theta with a sector of half-width epsilon around it."""

    theta: float
    epsilon: float = 0.05

    def __post_init__(self):
        if not 0.0 < self.epsilon < np.pi:
            raise ValueError("epsilon must lie in (0, pi)")


def companion_parts(op: EllipticOperator, x: float):
    """Return (A0, E) with A(x, z) = A0(x) + z * E(x) for the system of l + z.

    A0 carries identity superdiagonal blocks and bottom blocks
    beta_k = -alpha_n^{-1} alpha_k; E holds the z-derivative, a single
    bottom-left block -alpha_n^{-1}.  Constant-coefficient operators are
    evaluated once and cached.
    """
    if op.all_constant:
        cached = op._part_cache.get("parts")
        if cached is not None:
            return cached
    n, m = op.n, op.m
    nm = n * m
    alpha_n = op.alpha(n, x)
    try:
        inv_alpha_n = np.linalg.inv(alpha_n)
    except np.linalg.LinAlgError:
        raise SingularLeadingCoefficient(f"a_n({x}) is singular")
    a0 = np.zeros((nm, nm), dtype=complex)
    for i in range(n - 1):
        a0[i * m:(i + 1) * m, (i + 1) * m:(i + 2) * m] = np.eye(m)
    row = slice((n - 1) * m, nm)
    for k in range(n):
        a0[row, k * m:(k + 1) * m] = -inv_alpha_n @ op.alpha(k, x)
    e = np.zeros((nm, nm), dtype=complex)
    e[row, 0:m] = -inv_alpha_n
    if op.all_constant:
        op._part_cache["parts"] = (a0, e)
    return a0, e


def companion_matrix(op: EllipticOperator, x: float, z: complex = 0.0) -> np.ndarray:
    """Block companion matrix A(x) of phi' = A phi for the operator l + z."""
    if not op.a <= x <= op.b:
        raise ValueError(f"x={x} outside [{op.a}, {op.b}]")
    a0, e = companion_parts(op, x)
    return a0 + complex(z) * e


def check_ellipticity(op: EllipticOperator, grid_points: int = 257) -> bool:
    """True iff det a_n(x) stays away from zero on a uniform grid."""
    if grid_points < 2:
        raise ValueError("grid_points must be >= 2")
    for x in np.linspace(op.a, op.b, grid_points):
        an = op.coeff(op.n, float(x))
        if abs(np.linalg.det(an)) <= _DET_FLOOR * max(
            1.0, np.linalg.norm(an, "fro") ** op.m
        ):
            return False
    return True


def _angular_distance(phi: float, theta: float) -> float:
    d = (phi - theta + np.pi) % (2.0 * np.pi) - np.pi
    return abs(d)


def check_sector(op: EllipticOperator, angle: PrincipalAngle,
                 grid_points: int = 257) -> bool:
    """Numeric surrogate for the sector condition on the leading coefficient.

    Checks that no eigenvalue of a_n(x) has argument within ``epsilon`` of
    ``theta`` (for odd order also of ``theta + pi``, since the symbol
    ``a_n xi^n`` sweeps both half-rays).  This is weaker than full
    admissibility of the boundary value problem; downstream fits flag
    large residuals rather than trusting this check alone.
    """
    if grid_points < 2:
        raise ValueError("grid_points must be >= 2")
    rays = [angle.theta] if op.n % 2 == 0 else [angle.theta, angle.theta + np.pi]
    for x in np.linspace(op.a, op.b, grid_points):
        for eig in np.linalg.eigvals(op.coeff(op.n, float(x))):
            phi = float(np.angle(eig))
            if any(_angular_distance(phi, ray) <= angle.epsilon for ray in rays):
                return False
    return True


def rotate_to_pi(op: EllipticOperator, theta: float, *,
                 check: bool = True, epsilon: float = 0.05):
    """Rotate the problem so the principal angle becomes pi.

    Returns ``(op_rot, phase)`` where ``op_rot`` has every coefficient
    multiplied by ``phase = e^{i(pi - theta)}``.  The caller recovers the
    original-ray determinant through
    ``det_theta L = exp(i (theta - pi) zeta_rot(0)) * det_pi L_rot``.
    Boundary matrices are unaffected by scaling the operator.
    """
    if check and not check_sector(op, PrincipalAngle(theta, epsilon)):
        raise NotAdmissible(
            f"theta={theta} is not a principal angle of the leading coefficient"
        )
    phase = complex(np.exp(1j * (np.pi - theta)))
    if abs(phase - 1.0) < 1e-15:
        return op, 1.0 + 0.0j
    return op.scaled(phase), phase
