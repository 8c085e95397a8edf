"""Fundamental matrices, boundary determinants along the ray, and kernels.

The ray sampler delegates the determinant evaluation to the exterior-power
flow in :mod:`detline.compound` (stable at any ray position) and adds branch
tracking: phases are unwrapped by nearest-branch selection anchored at the
largest sample, with automatic midpoint refinement until consecutive phase
steps stay below pi.

Resolvent kernels use checkpointed trajectories with dense re-integration
between checkpoints; the inverse fundamental matrix is always applied by
solving, never by forming an inverse.  Kernel values at shift z are
trustworthy while z^(1/n) * (b - a) stays below roughly 30 (beyond that the
intrinsic mode cancellation exceeds double precision); the trace windows
chosen by the zeta pipelines respect this.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .compound import RayFlow, compound_ray_flow
from .errors import OrderTooLow, OverflowRisk, SingularMatrix
from .numcore import LogDet, lu_logdet, rk_integrate
from .operators import BoundaryCondition, EllipticOperator, companion_parts

__all__ = [
    "FundamentalMatrix",
    "RaySample",
    "RayData",
    "fundamental_matrix",
    "fundamental_matrix_batch",
    "r_matrix",
    "log_det_r_ray",
    "resolvent_kernel",
    "trace_resolvent",
    "trace_resolvent_batch",
    "ResolventEvaluator",
]

_OVERFLOW_LIMIT = 1e280
_PHASE_MARGIN = 0.95 * np.pi


@dataclass
class FundamentalMatrix:
    """phi(b; l+z) plus integration diagnostics and optional trajectory."""

    z: complex
    phi_b: np.ndarray
    tol: float
    steps: int
    rejected: int
    trajectory: Optional[list] = field(default=None, repr=False)


def _system_rhs(op, zs):
    zs = np.asarray(zs, dtype=complex)

    if op.all_constant:
        a0, e = companion_parts(op, op.a)
        mats = a0[None, :, :] + zs[:, None, None] * e[None, :, :]

        def deriv(x, y):
            return mats @ y
    else:
        def deriv(x, y):
            a0, e = companion_parts(op, x)
            return a0 @ y + (e @ y) * zs[:, None, None]

    return deriv


def fundamental_matrix_batch(op: EllipticOperator, zs, tol: float,
                             checkpoints: Optional[Sequence[float]] = None):
    """phi(b; l+z) for a batch of shifts; state shape (len(zs), nm, nm)."""
    zs = np.asarray(zs, dtype=complex)
    nm = op.size
    y0 = np.broadcast_to(np.eye(nm, dtype=complex), (len(zs), nm, nm)).copy()
    res = rk_integrate(
        _system_rhs(op, zs), op.a, op.b, y0, tol,
        checkpoints=checkpoints, overflow_limit=_OVERFLOW_LIMIT,
    )
    return res


def fundamental_matrix(op: EllipticOperator, z: complex, tol: float = 1e-10,
                       store_trajectory: bool = False,
                       n_checkpoints: int = 64) -> FundamentalMatrix:
    """Fundamental matrix phi(b; l+z) with phi(a) = identity.

    Raises :class:`OverflowRisk` when entries exceed 1e280 (the caller must
    shrink its sampling window; the ray sampler avoids this entirely by
    using the rescaled compound flow).
    """
    cps = None
    if store_trajectory:
        cps = list(np.linspace(op.a, op.b, n_checkpoints + 1)[1:-1])
    res = fundamental_matrix_batch(op, [z], tol, checkpoints=cps)
    traj = None
    if store_trajectory:
        traj = [(op.a, np.eye(op.size, dtype=complex))]
        traj += [(x, y[0]) for x, y in res.checkpoints]
        traj += [(op.b, res.y[0])]
    return FundamentalMatrix(z=complex(z), phi_b=res.y[0], tol=tol,
                             steps=res.steps, rejected=res.rejected,
                             trajectory=traj)


def r_matrix(op: EllipticOperator, bc: BoundaryCondition, z: complex,
             tol: float = 1e-10) -> np.ndarray:
    """Characteristic matrix R(z) = R_a + R_b phi(b; l+z)."""
    fm = fundamental_matrix(op, z, tol)
    return bc.Ra + bc.Rb @ fm.phi_b


# ---------------------------------------------------------------------------
# Branch-tracked determinant along the positive ray
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RaySample:
    """One branch-tracked sample of log det R on the positive real axis."""

    x: float
    logdet: LogDet
    detR0_reference: complex


@dataclass
class RayData:
    """Branch-continuous ray samples plus certification diagnostics."""

    samples: list
    certified: bool
    truncated: bool
    refined: int
    detR0: complex
    growth: np.ndarray

    @property
    def xs(self):
        return np.array([s.x for s in self.samples])

    @property
    def values(self):
        return np.array(
            [s.logdet.log_modulus + 1j * s.logdet.phase for s in self.samples]
        )


def _unwrap_from_top(phases):
    """Nearest-branch unwrap anchored at the largest-x (last) sample."""
    out = np.array(phases, dtype=float)
    for j in range(len(out) - 2, -1, -1):
        out[j] += 2.0 * np.pi * np.round((out[j + 1] - out[j]) / (2.0 * np.pi))
    return out


def log_det_r_ray(op: EllipticOperator, bc: BoundaryCondition, xs, tol: float,
                  *, flow: Optional[RayFlow] = None,
                  max_refine: int = 64) -> RayData:
    """Branch-continuous log det R(x) on an ascending positive grid.

    Midpoints are inserted (geometrically) wherever consecutive phases jump
    by more than 0.95 pi, until the continuity certificate holds or the
    refinement budget is exhausted.
    """
    xs = np.sort(np.asarray(xs, dtype=float))
    if len(xs) and xs[0] <= 0:
        raise ValueError("ray samples must be positive")
    if flow is None:
        flow = compound_ray_flow(op, xs, tol)
    log_mod, phase = flow.assemble(bc)
    growth = flow.growth.copy()
    order = np.argsort(flow.zs.real)
    xs_all = flow.zs.real[order].copy()
    lm_all = log_mod[order].copy()
    ph_all = phase[order].copy()

    refined = 0
    while True:
        unwrapped = _unwrap_from_top(ph_all)
        gaps = np.abs(np.diff(unwrapped))
        bad = np.where(gaps >= _PHASE_MARGIN)[0]
        if len(bad) == 0 or refined >= max_refine:
            break
        inserts = np.sqrt(xs_all[bad] * xs_all[bad + 1])
        inserts = np.unique(inserts)[: max_refine - refined]
        refined += len(inserts)
        sub = compound_ray_flow(op, inserts, tol)
        s_lm, s_ph = sub.assemble(bc)
        xs_all = np.concatenate([xs_all, inserts])
        lm_all = np.concatenate([lm_all, s_lm])
        ph_all = np.concatenate([ph_all, s_ph])
        growth = np.concatenate([growth, sub.growth])
        order = np.argsort(xs_all)
        xs_all, lm_all, ph_all = xs_all[order], lm_all[order], ph_all[order]
        growth = growth[order]

    unwrapped = _unwrap_from_top(ph_all)
    certified = bool(np.all(np.abs(np.diff(unwrapped)) < _PHASE_MARGIN))

    try:
        det0 = lu_logdet(r_matrix(op, bc, 0.0, tol)).to_complex()
    except SingularMatrix:
        det0 = 0.0 + 0.0j

    samples = [
        RaySample(float(x), LogDet(float(lm), float(ph)), det0)
        for x, lm, ph in zip(xs_all, lm_all, unwrapped)
    ]
    return RayData(samples=samples, certified=certified, truncated=False,
                   refined=refined, detR0=det0, growth=growth)


# ---------------------------------------------------------------------------
# Resolvent kernel and traces
# ---------------------------------------------------------------------------

def _graded_edges(a: float, b: float) -> np.ndarray:
    """Panel edges refined toward both endpoints (boundary layers)."""
    fr = [0.0, 1 / 128, 1 / 64, 1 / 32, 1 / 16, 1 / 8, 3 / 16, 1 / 4, 3 / 8, 1 / 2]
    left = np.array(fr)
    edges = np.unique(np.concatenate([left, 1.0 - left]))
    return a + (b - a) * edges


class ResolventEvaluator:
    """Kernel evaluations of (L + z)^{-1} for a batch of shifts z.

    Holds forward and backward checkpointed trajectories; the diagonal
    kernel uses the representation conjugating R^{-1} R_a for points in the
    left half of the interval and the backward propagator form on the right
    half, which keeps the intrinsic cancellation at e^{2 w min(t, b-t)}.
    """

    def __init__(self, op: EllipticOperator, bc: BoundaryCondition, zs,
                 tol: float = 1e-12, n_panels: int = 32):
        self.op = op
        self.bc = bc
        self.zs = np.asarray(zs, dtype=complex)
        self.tol = tol
        nm = op.size
        nb = len(self.zs)
        self.grid = np.linspace(op.a, op.b, n_panels + 1)

        fwd = fundamental_matrix_batch(op, self.zs, tol,
                                       checkpoints=list(self.grid[1:-1]))
        eye = np.broadcast_to(np.eye(nm, dtype=complex), (nb, nm, nm)).copy()
        self._phi = {op.a: eye.copy(), op.b: fwd.y}
        for x, y in fwd.checkpoints:
            self._phi[x] = y
        self.phi_b = fwd.y

        # backward propagator Psi(t) = phi(b) phi^{-1}(t): in the mirrored
        # variable tau = a + b - t it satisfies G' = G A(a+b-tau), G(a) = 1
        zs_local = self.zs

        if op.all_constant:
            a0c, ec = companion_parts(op, op.a)
            mats = a0c[None] + zs_local[:, None, None] * ec[None]

            def bwd_rhs(tau, y):
                return y @ mats
        else:
            def bwd_rhs(tau, y):
                a0, e = companion_parts(op, op.a + op.b - tau)
                return y @ a0 + (y @ e) * zs_local[:, None, None]

        self._bwd_rhs = bwd_rhs
        bwd = rk_integrate(bwd_rhs, op.a, op.b, eye.copy(), tol,
                           checkpoints=list(self.grid[1:-1]),
                           overflow_limit=_OVERFLOW_LIMIT)
        # keyed by tau = a + b - t;  G(tau) = Psi(a + b - tau)
        self._psi_tau = {float(op.a): eye.copy(), float(op.b): bwd.y}
        for tau, y in bwd.checkpoints:
            self._psi_tau[float(tau)] = y

        self._fwd_rhs = _system_rhs(op, self.zs)
        self.r = bc.Ra + bc.Rb @ self.phi_b
        self._w = np.linalg.solve(self.r, np.broadcast_to(bc.Ra, self.r.shape))
        self._y = np.linalg.solve(self.r, np.broadcast_to(bc.Rb, self.r.shape))

    def _advance(self, table, rhs, start, targets):
        """Re-integrate from a stored checkpoint through ascending targets."""
        out = {}
        y = table[start]
        x_from = start
        for t in targets:
            if t > x_from:
                res = rk_integrate(rhs, x_from, t, y, self.tol,
                                   overflow_limit=_OVERFLOW_LIMIT)
                y = res.y
                x_from = t
            out[t] = y
        return out

    def _lookup(self, table, rhs, points):
        grid = self.grid
        groups = {}
        for t in points:
            gi = min(bisect_right(grid, t) - 1, len(grid) - 1)
            groups.setdefault(gi, set()).add(float(t))
        out = {}
        for gi, locs in groups.items():
            out.update(self._advance(table, rhs, float(grid[gi]), sorted(locs)))
        return out

    def phi_at(self, ts):
        """phi(t) at each target, re-integrating from stored checkpoints."""
        ts = [float(t) for t in np.atleast_1d(ts)]
        out = self._lookup(self._phi, self._fwd_rhs, ts)
        return [out[t] for t in ts]

    def psi_at(self, ts):
        """Psi(t) = phi(b) phi^{-1}(t), from the mirrored backward flow."""
        a, b = self.op.a, self.op.b
        ts = [float(t) for t in np.atleast_1d(ts)]
        out = self._lookup(self._psi_tau, self._bwd_rhs, [a + b - t for t in ts])
        return [out[float(a + b - t)] for t in ts]

    def _alpha_inv(self, t):
        return np.linalg.inv(self.op.alpha(self.op.n, t))

    def _top_right(self, mats):
        m, n = self.op.m, self.op.n
        return mats[:, 0:m, (n - 1) * m:]

    def kernel_diag_plus(self, ts):
        """K(t, t + 0) at each t; returns array (len(ts), batch, m, m)."""
        ts = np.asarray(ts, dtype=float)
        mid = 0.5 * (self.op.a + self.op.b)
        n = self.op.n
        out = np.empty((len(ts), len(self.zs), self.op.m, self.op.m), dtype=complex)
        left_idx = [i for i, t in enumerate(ts) if t <= mid]
        right_idx = [i for i, t in enumerate(ts) if t > mid]
        if left_idx:
            phis = self.phi_at(ts[left_idx])
            for i, phi in zip(left_idx, phis):
                t = float(ts[i])
                mw = phi @ self._w
                full = np.linalg.solve(
                    phi.transpose(0, 2, 1), mw.transpose(0, 2, 1)
                ).transpose(0, 2, 1)
                if n >= 2:
                    out[i] = self._top_right(full) @ self._alpha_inv(t)
                else:
                    eye = np.eye(self.op.m, dtype=complex)
                    out[i] = -(eye[None] - self._top_right(full)) @ self._alpha_inv(t)
        if right_idx:
            psis = self.psi_at(ts[right_idx])
            phis = self.phi_at(ts[right_idx])
            for i, psi, phi in zip(right_idx, psis, phis):
                t = float(ts[i])
                block = (phi @ self._y) @ psi
                out[i] = -self._top_right(block) @ self._alpha_inv(t)
        return out

    def kernel(self, x: float, y: float, side: int = +1):
        """K(x, y) per the two-branch formula; ``side`` picks the diagonal limit."""
        if x == y and side >= 0:
            return self.kernel_diag_plus([x])[0]
        branch_upper = y > x
        phi_x = self.phi_at([x])[0]
        psi_y = self.psi_at([y])[0]
        block = phi_x @ (self._y @ psi_y)
        if not branch_upper:
            # subtract phi(x) phi^{-1}(y), applied by solving against phi(y)
            phi_y = self.phi_at([y])[0]
            prop = np.linalg.solve(
                phi_y.transpose(0, 2, 1), phi_x.transpose(0, 2, 1)
            ).transpose(0, 2, 1)
            block = block - prop
        return -self._top_right(block) @ self._alpha_inv(y)

    def trace(self, gauss_order: int = 6) -> np.ndarray:
        """integral of tr K(t, t+0) dt over the interval, per batch element."""
        edges = _graded_edges(self.op.a, self.op.b)
        xg, wg = np.polynomial.legendre.leggauss(gauss_order)
        nodes, weights = [], []
        for lo, hi in zip(edges[:-1], edges[1:]):
            nodes.append(0.5 * (lo + hi) + 0.5 * (hi - lo) * xg)
            weights.append(0.5 * (hi - lo) * wg)
        nodes = np.concatenate(nodes)
        weights = np.concatenate(weights)
        diag = self.kernel_diag_plus(nodes)
        tr = np.trace(diag, axis1=2, axis2=3)
        return np.tensordot(weights, tr, axes=(0, 0))


def resolvent_kernel(op: EllipticOperator, bc: BoundaryCondition, z: complex,
                     x: float, y: float, tol: float = 1e-12,
                     side: int = +1) -> np.ndarray:
    """Resolvent kernel K(x, y) of (L + z)^{-1} as an m x m matrix.

    Raises :class:`SingularMatrix` when det R(z) = 0 (L + z not invertible).
    """
    ev = ResolventEvaluator(op, bc, [z], tol)
    lu_logdet(ev.r[0])  # raises SingularMatrix on a zero mode
    return ev.kernel(x, y, side=side)[0]


def trace_resolvent_batch(op: EllipticOperator, bc: BoundaryCondition, zs,
                          tol: float = 1e-12) -> np.ndarray:
    if op.n < 2:
        raise OrderTooLow("the resolvent of a first-order operator is not "
                          "trace class; use the regularized-trace machinery")
    ev = ResolventEvaluator(op, bc, zs, tol)
    return ev.trace()


def trace_resolvent(op: EllipticOperator, bc: BoundaryCondition, z: complex,
                    tol: float = 1e-12) -> complex:
    """Tr (L + z)^{-1} as the integral of the diagonal kernel trace."""
    return complex(trace_resolvent_batch(op, bc, [z], tol)[0])
