import numpy as np
import pytest

from detline.errors import OrderTooLow, SingularMatrix
from detline.fundsol import (
    ResolventEvaluator,
    fundamental_matrix,
    log_det_r_ray,
    r_matrix,
    resolvent_kernel,
    trace_resolvent,
    trace_resolvent_batch,
)
from detline.numcore import lu_logdet, quad
from detline.operators import BoundaryCondition, EllipticOperator


def laplace_plus(q, m=1):
    return EllipticOperator(2, m, 0.0, 1.0, (q, None, 1.0))


def dirichlet_bc():
    return BoundaryCondition(
        np.array([[1.0, 0.0], [0.0, 0.0]]), np.array([[0.0, 0.0], [1.0, 0.0]])
    )


def periodic_bc(nm=2):
    return BoundaryCondition(-np.eye(nm), np.eye(nm))


class TestFundamentalMatrix:
    def test_free_laplacian_closed_form(self):
        # phi(1) for z = mu^2: [[cosh mu, sinh mu / mu], [mu sinh mu, cosh mu]]
        mu = 1.7
        fm = fundamental_matrix(laplace_plus(0.0), mu ** 2, 1e-11)
        expected = np.array(
            [[np.cosh(mu), np.sinh(mu) / mu], [mu * np.sinh(mu), np.cosh(mu)]]
        )
        assert np.allclose(fm.phi_b, expected, rtol=1e-9)

    def test_first_order_constant_solutions(self):
        op = EllipticOperator(1, 1, 0.0, 1.0, (None, 1.0))
        fm = fundamental_matrix(op, 0.0, 1e-12)
        assert fm.phi_b[0, 0] == pytest.approx(1.0, abs=1e-12)

    def test_variable_coefficient_against_fixed_step_rk4(self):
        q = lambda x: np.sin(2 * np.pi * x)
        op = laplace_plus(q)
        fm = fundamental_matrix(op, 0.0, 1e-12)

        # high-resolution fixed-step classical RK4 reference
        def rhs(x, y):
            return np.array([[0.0, 1.0], [q(x), 0.0]]) @ y

        y = np.eye(2)
        nsteps = 4000
        h = 1.0 / nsteps
        for i in range(nsteps):
            x = i * h
            k1 = rhs(x, y)
            k2 = rhs(x + h / 2, y + h / 2 * k1)
            k3 = rhs(x + h / 2, y + h / 2 * k2)
            k4 = rhs(x + h, y + h * k3)
            y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        assert np.max(np.abs(fm.phi_b - y)) < 1e-9

    def test_trajectory_starts_at_identity_and_stays_invertible(self):
        fm = fundamental_matrix(laplace_plus(1.0), 3.0, 1e-10,
                                store_trajectory=True)
        assert np.allclose(fm.trajectory[0][1], np.eye(2))
        for _, phi in fm.trajectory:
            assert np.isfinite(lu_logdet(phi).log_modulus)


class TestRMatrix:
    def test_dirichlet_determinant(self):
        mu = 1.3
        r = r_matrix(laplace_plus(mu ** 2), dirichlet_bc(), 0.0, 1e-11)
        assert np.linalg.det(r) == pytest.approx(np.sinh(mu) / mu, rel=1e-9)

    def test_periodic_determinant(self):
        mu = 0.9
        r = r_matrix(laplace_plus(mu ** 2), periodic_bc(), 0.0, 1e-11)
        assert np.linalg.det(r) == pytest.approx(-2 * (np.cosh(mu) - 1), rel=1e-9)

    def test_antiperiodic_determinant(self):
        mu = 0.9
        bc = BoundaryCondition(np.eye(2), np.eye(2))
        r = r_matrix(laplace_plus(mu ** 2), bc, 0.0, 1e-11)
        assert np.linalg.det(r) == pytest.approx(2 * (np.cosh(mu) + 1), rel=1e-9)


class TestRay:
    def test_single_sample_consistent_with_plain_lu(self):
        op = laplace_plus(1.0)
        bc = periodic_bc()
        for x in (5.0, 50.0):
            ray = log_det_r_ray(op, bc, [x], 1e-11)
            direct = lu_logdet(r_matrix(op, bc, x, 1e-11))
            s = ray.samples[0]
            assert s.logdet.log_modulus == pytest.approx(direct.log_modulus, abs=1e-8)
            assert np.exp(1j * s.logdet.phase) == pytest.approx(
                np.exp(1j * direct.phase), abs=1e-7
            )

    def test_dirichlet_phase_identically_zero(self):
        ray = log_det_r_ray(laplace_plus(1.0), dirichlet_bc(),
                            np.geomspace(10, 1e4, 25), 1e-10)
        assert ray.certified
        assert np.allclose([s.logdet.phase for s in ray.samples], 0.0, atol=1e-7)

    def test_periodic_phase_constant_pi(self):
        ray = log_det_r_ray(laplace_plus(1.0), periodic_bc(),
                            np.geomspace(10, 1e4, 25), 1e-10)
        assert ray.certified
        phases = np.array([s.logdet.phase for s in ray.samples])
        assert np.allclose(np.abs(phases), np.pi, atol=1e-7)

    def test_mesh_halving_preserves_phases(self):
        op = laplace_plus(1.0)
        bc = dirichlet_bc()
        coarse = np.geomspace(20, 2e3, 9)
        fine = np.geomspace(20, 2e3, 17)  # contains the coarse grid
        ray_c = log_det_r_ray(op, bc, coarse, 1e-10)
        ray_f = log_det_r_ray(op, bc, fine, 1e-10)
        vals_f = {round(s.x, 9): s.logdet.phase for s in ray_f.samples}
        for s in ray_c.samples:
            assert s.logdet.phase == pytest.approx(vals_f[round(s.x, 9)], abs=1e-8)

    def test_det_r_vanishes_at_eigenvalues(self):
        # Dirichlet spectrum: lambda_k = k^2 pi^2 + mu^2
        op = laplace_plus(1.0)
        bc = dirichlet_bc()
        from detline.compound import ray_logdet_batch

        lams = np.array([k ** 2 * np.pi ** 2 + 1.0 for k in range(1, 11)])
        log_mod, _, _ = ray_logdet_batch(op, bc, -lams, 1e-12)
        # local scale: det R at a nearby non-eigenvalue point
        scale_log, _, _ = ray_logdet_batch(op, bc, -(lams + 2.0), 1e-12)
        assert np.all(np.exp(log_mod - scale_log) < 1e-6)


class TestResolventKernel:
    def test_dirichlet_green_function_oracle(self):
        # classical closed form for -u'' + u with u(0) = u(1) = 0
        op = laplace_plus(1.0)
        bc = dirichlet_bc()
        ev = ResolventEvaluator(op, bc, [0.0], 1e-12)

        def exact(x, y):
            lo, hi = min(x, y), max(x, y)
            return np.sinh(lo) * np.sinh(1.0 - hi) / np.sinh(1.0)

        rng = np.random.default_rng(5)
        pts = rng.uniform(0.02, 0.98, size=(25, 2))
        for x, y in pts:
            got = ev.kernel(float(x), float(y))[0][0, 0]
            assert got == pytest.approx(exact(x, y), abs=2e-10)

    def test_kernel_continuous_but_derivative_jumps(self):
        op = laplace_plus(1.0)
        bc = dirichlet_bc()
        ev = ResolventEvaluator(op, bc, [0.0], 1e-12)
        x0, eps = 0.4, 1e-5
        k_minus = ev.kernel(x0, x0 - eps)[0][0, 0]
        k_plus = ev.kernel(x0, x0 + eps)[0][0, 0]
        assert k_minus == pytest.approx(k_plus, abs=1e-4)  # continuity (n = 2)
        # one-sided derivative in y jumps by one across the diagonal
        dk_minus = (k_minus - ev.kernel(x0, x0 - 2 * eps)[0][0, 0]) / eps
        dk_plus = (ev.kernel(x0, x0 + 2 * eps)[0][0, 0] - k_plus) / eps
        assert dk_minus - dk_plus == pytest.approx(1.0, abs=1e-3)

    def test_symmetry_for_self_adjoint_fixture(self):
        op = laplace_plus(1.0)
        ev = ResolventEvaluator(op, dirichlet_bc(), [0.0], 1e-12)
        for x, y in [(0.2, 0.7), (0.35, 0.5), (0.8, 0.15)]:
            assert ev.kernel(x, y)[0][0, 0] == pytest.approx(
                ev.kernel(y, x)[0][0, 0], abs=1e-10
            )

    def test_singular_shift_raises(self):
        op = laplace_plus(0.0)
        with pytest.raises(SingularMatrix):
            resolvent_kernel(op, dirichlet_bc(), -np.pi ** 2, 0.3, 0.6)

    def test_weak_form_identity(self):
        # applying l + z to x -> integral of K(x, y) g(y) recovers g
        op = laplace_plus(1.0)
        ev = ResolventEvaluator(op, dirichlet_bc(), [0.0], 1e-12)
        rng = np.random.default_rng(11)
        coef = rng.normal(size=(5, 3))
        grid = np.linspace(0.1, 0.9, 33)
        h = grid[1] - grid[0]
        for c in coef:
            g = lambda y: c[0] + c[1] * np.sin(np.pi * y) + c[2] * y ** 2

            def v(x):
                left = quad(lambda y: ev.kernel(x, y)[0][0, 0] * g(y), 0.0, x, 1e-10)
                right = quad(lambda y: ev.kernel(x, y)[0][0, 0] * g(y), x, 1.0, 1e-10)
                return (left + right).real

            vs = np.array([v(x) for x in grid])
            vpp = (vs[2:] - 2 * vs[1:-1] + vs[:-2]) / h ** 2
            recovered = -vpp + vs[1:-1]
            expected = g(grid[1:-1])
            assert np.max(np.abs(recovered - expected)) < 2e-3 * max(
                1.0, np.max(np.abs(expected))
            )


class TestTraceResolvent:
    def test_dirichlet_series_oracle(self):
        # sum over k of 1 / (k^2 pi^2 + 1) = coth(1)/2 - 1/2
        val = trace_resolvent(laplace_plus(1.0), dirichlet_bc(), 0.0, 1e-12)
        expected = 0.5 / np.tanh(1.0) - 0.5
        assert val.real == pytest.approx(expected, abs=1e-9)
        assert abs(val.imag) < 1e-10

    def test_periodic_series_oracle(self):
        # sum over all integers of 1 / (4 pi^2 k^2 + 1) = coth(1/2)/2
        val = trace_resolvent(laplace_plus(1.0), periodic_bc(), 0.0, 1e-12)
        assert val.real == pytest.approx(0.5 / np.tanh(0.5), abs=1e-9)

    def test_large_shift_decay_exponent(self):
        # slope approaches -1/2 from above (subleading 1/w correction keeps
        # it near -0.47 over the trustworthy kernel window)
        op = laplace_plus(1.0)
        xs = np.geomspace(200, 900, 8)
        vals = trace_resolvent_batch(op, dirichlet_bc(), xs, 1e-13).real
        slope = np.polyfit(np.log(xs), np.log(vals), 1)[0]
        assert slope == pytest.approx(-0.5, abs=0.05)

    def test_trace_matches_closed_form_along_ray(self):
        # sum over k of 1/(k^2 pi^2 + 1 + x) = (coth(w)/w - 1/w^2)/2, w^2 = 1+x
        op = laplace_plus(1.0)
        xs = np.geomspace(5, 500, 10)
        vals = trace_resolvent_batch(op, dirichlet_bc(), xs, 1e-13).real
        w = np.sqrt(1 + xs)
        exact = 0.5 * (1 / np.tanh(w) / w - 1 / w ** 2)
        assert np.max(np.abs(vals / exact - 1)) < 1e-8

    def test_first_order_rejected(self):
        op = EllipticOperator(1, 1, 0.0, 1.0, (None, 1.0))
        bc = BoundaryCondition(np.array([[-1.0]]), np.array([[1.0]]))
        with pytest.raises(OrderTooLow):
            trace_resolvent(op, bc, 0.0)

    def test_trace_fits_inverse_power_basis(self):
        # asymptotic basis x^((1-k)/n - 1) captures the samples to 1e-6
        from detline.regularize import ExponentBasis, fit_expansion

        op = laplace_plus(1.0)
        xs = np.geomspace(60, 300, 16)
        vals = trace_resolvent_batch(op, dirichlet_bc(), xs, 1e-13)
        terms = [((1 - k) / 2 - 1, 0) for k in range(0, 9)]
        fit = fit_expansion(list(zip(xs, vals)), ExponentBasis.from_pairs(terms))
        assert fit.residual < 1e-6
