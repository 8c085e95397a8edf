"""Dense complex matrix arithmetic, adaptive ODE stepping, and quadrature.

Everything here is a pure function of its inputs; no shared mutable state, so
all operations are safe to call concurrently.  Matrices are plain complex
``numpy`` arrays in row-major order; :func:`as_cmatrix` is the validating
entry point used at API boundaries.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg

from .errors import NoConvergence, SingularMatrix, StepUnderflow

__all__ = [
    "LogDet",
    "RkResult",
    "as_cmatrix",
    "lu_logdet",
    "solve",
    "rk_integrate",
    "quad",
    "gauss_panels",
]

#: pivots below PIVOT_RTOL * (max row norm) are treated as exact zeros
PIVOT_RTOL = 1e-13


def as_cmatrix(m, rows=None, cols=None):
    """Validate and return a 2-d complex array (finite entries required)."""
    a = np.asarray(m, dtype=complex)
    if a.ndim != 2:
        raise ValueError(f"expected a matrix, got ndim={a.ndim}")
    if rows is not None and a.shape[0] != rows:
        raise ValueError(f"expected {rows} rows, got {a.shape[0]}")
    if cols is not None and a.shape[1] != cols:
        raise ValueError(f"expected {cols} cols, got {a.shape[1]}")
    if not np.all(np.isfinite(a.view(float))):
        raise ValueError("matrix entries must be finite")
    return a


@dataclass(frozen=True)
class LogDet:
    """A determinant stored as log-modulus and phase.

    ``phase`` is in radians and deliberately *not* reduced mod 2*pi so that a
    caller tracking a continuous branch can store unwrapped values here.  A
    single :func:`lu_logdet` call reports phase in (-pi, pi].
    """

    log_modulus: float
    phase: float

    def to_complex(self) -> complex:
        return complex(np.exp(self.log_modulus + 1j * self.phase))


def _lu_pieces(m):
    a = as_cmatrix(m)
    if a.shape[0] != a.shape[1]:
        raise ValueError("matrix must be square")
    if a.shape[0] == 0:
        raise ValueError("matrix must be nonempty")
    row_scale = np.max(np.sum(np.abs(a), axis=1))
    lu, piv = scipy.linalg.lu_factor(a, check_finite=False)
    diag = np.diag(lu)
    if np.min(np.abs(diag)) <= PIVOT_RTOL * max(row_scale, 1e-300):
        raise SingularMatrix(
            f"pivot magnitude {np.min(np.abs(diag)):.3e} below threshold "
            f"{PIVOT_RTOL * row_scale:.3e}"
        )
    return a, lu, piv, diag


def lu_logdet(m) -> LogDet:
    """Log-determinant via partially pivoted LU.

    Raises :class:`SingularMatrix` when a pivot underflows the relative
    threshold (the determinant is then numerically zero).
    """
    _, lu, piv, diag = _lu_pieces(m)
    log_mod = float(np.sum(np.log(np.abs(diag))))
    phase = float(np.sum(np.angle(diag)))
    # each row swap flips the determinant sign
    swaps = int(np.sum(piv != np.arange(len(piv))))
    phase += np.pi * (swaps % 2)
    phase = float((phase + np.pi) % (2.0 * np.pi) - np.pi)
    if phase <= -np.pi:
        phase = np.pi
    return LogDet(log_mod, phase)


def solve(m, b):
    """Solve M X = B with one step of iterative refinement.

    Residual stays near machine level for condition numbers up to ~1e6.
    """
    a, lu, piv, _ = _lu_pieces(m)
    rhs = np.asarray(b, dtype=complex)
    squeeze = rhs.ndim == 1
    if squeeze:
        rhs = rhs[:, None]
    x = scipy.linalg.lu_solve((lu, piv), rhs, check_finite=False)
    r = rhs - a @ x
    x = x + scipy.linalg.lu_solve((lu, piv), r, check_finite=False)
    return x[:, 0] if squeeze else x


# ---------------------------------------------------------------------------
# Adaptive Runge-Kutta (Dormand-Prince 5(4) with PI step control)
# ---------------------------------------------------------------------------

_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_E = _DP_B5 - np.array(
    [5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40]
)

_MIN_STEP_FRACTION = 1e-14


@dataclass
class RkResult:
    """Integration endpoint plus step diagnostics."""

    y: np.ndarray
    steps: int
    rejected: int
    checkpoints: Optional[list] = None


def _default_error_norm(err, y0, y1, atol, rtol):
    scale = atol + rtol * max(np.max(np.abs(y0)), np.max(np.abs(y1)), 1e-300)
    return float(np.max(np.abs(err)) / scale)


def rk_integrate(
    f: Callable,
    x0: float,
    x1: float,
    y0,
    tol: float,
    *,
    atol: float = 0.0,
    max_step: float = np.inf,
    first_step: Optional[float] = None,
    post_step: Optional[Callable] = None,
    error_norm: Optional[Callable] = None,
    checkpoints: Optional[Sequence[float]] = None,
    overflow_limit: Optional[float] = None,
) -> RkResult:
    """Integrate Y' = f(x, Y) from x0 to x1 with an embedded 5(4) pair.

    ``y0`` may have any shape (matrix-valued and batched states are fine);
    the stepper only does linear combinations of whatever ``f`` returns.

    Parameters beyond the basic five exist for internal callers: ``post_step``
    runs after each accepted step on the flattened state and may rescale it
    (return ``(y, True)`` to invalidate the FSAL derivative), ``checkpoints``
    forces exact stops at the given abscissae and records the state there,
    and ``error_norm(err, y_old, y_new, atol, rtol)`` overrides the scaled
    max-norm (all arguments flattened).

    Raises
    ------
    StepUnderflow
        when the required step drops below 1e-14 * (x1 - x0).
    OverflowRisk
        when ``overflow_limit`` is set and an entry magnitude exceeds it.
    """
    if not x1 > x0:
        raise ValueError("x1 must exceed x0")
    if tol <= 0:
        raise ValueError("tol must be positive")
    shape = np.shape(np.asarray(y0))
    y = np.array(y0, dtype=complex).ravel()
    rtol = tol
    norm = error_norm or _default_error_norm

    def eval_f(x, v):
        return np.asarray(f(x, v.reshape(shape)), dtype=complex).ravel()

    stops = [float(x1)]
    if checkpoints is not None:
        stops = sorted(set(float(c) for c in checkpoints) | {float(x1)})
        if any(c < x0 or c > x1 for c in stops):
            raise ValueError("checkpoints must lie inside [x0, x1]")
    recorded = []

    span = x1 - x0
    h_min = _MIN_STEP_FRACTION * span
    x = float(x0)
    k1 = eval_f(x, y)

    if first_step is not None:
        h = float(first_step)
    else:
        scale = max(np.max(np.abs(y)), 1e-300)
        d1 = np.max(np.abs(k1)) / scale
        h = min(span * 0.05, (0.01 / d1) if d1 > 0 else span * 0.05)
    h = min(h, max_step, span)

    steps = rejected = 0
    err_prev = 1.0
    stop_idx = 0
    stages = np.empty((7, y.size), dtype=complex)

    while True:
        target = stops[stop_idx]
        if x >= target - 1e-15 * span:
            if target != x1 or stop_idx < len(stops) - 1:
                recorded.append((target, y.reshape(shape).copy()))
            stop_idx += 1
            if stop_idx > len(stops) - 1 or target == x1:
                break
            continue
        h = min(h, target - x, max_step)
        if h < h_min:
            raise StepUnderflow(f"step {h:.3e} below floor at x={x:.6g}")

        stages[0] = k1
        for i in range(1, 7):
            yi = y + h * (_DP_A[i] @ stages[:i])
            stages[i] = eval_f(x + _DP_C[i] * h, yi)

        y_new = y + h * (_DP_B5 @ stages)
        err_vec = h * (_DP_E @ stages)
        err = norm(err_vec, y, y_new, atol, rtol)

        if not np.isfinite(err):
            err = 10.0
        if err <= 1.0:
            steps += 1
            x = x + h
            y = y_new
            k1 = stages[6].copy()  # FSAL
            if overflow_limit is not None and np.max(np.abs(y)) > overflow_limit:
                from .errors import OverflowRisk

                raise OverflowRisk(f"state magnitude exceeded {overflow_limit:.1e}", x=x)
            if post_step is not None:
                y, invalidated = post_step(x, y)
                if invalidated:
                    k1 = eval_f(x, y)
            fac = 0.9 * err ** -0.14 * err_prev ** 0.08 if err > 0 else 5.0
            err_prev = max(err, 1e-10)
            h = h * min(5.0, max(0.2, fac))
        else:
            rejected += 1
            h = h * min(1.0, max(0.2, 0.9 * err ** -0.2))

    return RkResult(y=y.reshape(shape), steps=steps, rejected=rejected,
                    checkpoints=recorded if checkpoints is not None else None)


# ---------------------------------------------------------------------------
# Adaptive quadrature (paired Gauss rules, global error heap)
# ---------------------------------------------------------------------------

_G15_X, _G15_W = np.polynomial.legendre.leggauss(15)
_G7_X, _G7_W = np.polynomial.legendre.leggauss(7)


def _panel(f, a, b):
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    v15 = sum(w * f(mid + half * t) for t, w in zip(_G15_X, _G15_W)) * half
    v7 = sum(w * f(mid + half * t) for t, w in zip(_G7_X, _G7_W)) * half
    return v15, abs(v15 - v7)


def quad(f: Callable[[float], complex], a: float, b: float, tol: float,
         *, max_intervals: int = 4096) -> complex:
    """Adaptive quadrature of a (possibly complex-valued) function on [a, b].

    Panels are bisected greedily by estimated error until the global estimate
    drops below ``tol``.  Raises :class:`NoConvergence` at the interval cap.
    """
    if a == b:
        return 0.0 + 0.0j
    v, e = _panel(f, a, b)
    heap = [(-e, a, b, v)]
    total_v, total_e = v, e
    count = 1
    while total_e > tol:
        if count >= max_intervals:
            raise NoConvergence(
                f"quadrature error {total_e:.3e} > tol {tol:.3e} "
                f"after {count} intervals"
            )
        neg_e, lo, hi, val = heapq.heappop(heap)
        mid = 0.5 * (lo + hi)
        v1, e1 = _panel(f, lo, mid)
        v2, e2 = _panel(f, mid, hi)
        total_v += v1 + v2 - val
        total_e += e1 + e2 - (-neg_e)
        heapq.heappush(heap, (-e1, lo, mid, v1))
        heapq.heappush(heap, (-e2, mid, hi, v2))
        count += 1
    return complex(total_v)


def gauss_panels(f_vec: Callable, edges: Sequence[float], order: int = 8):
    """Fixed composite Gauss-Legendre quadrature over consecutive panels.

    ``f_vec`` receives a 1-d array of nodes and must return values with the
    node axis first (extra trailing axes allowed).  Returns the sum over all
    panels.
    """
    x_ref, w_ref = np.polynomial.legendre.leggauss(order)
    edges = np.asarray(edges, dtype=float)
    nodes = []
    weights = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        nodes.append(mid + half * x_ref)
        weights.append(half * w_ref)
    nodes = np.concatenate(nodes)
    weights = np.concatenate(weights)
    vals = np.asarray(f_vec(nodes))
    return np.tensordot(weights, vals, axes=(0, 0))
