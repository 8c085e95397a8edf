import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from detline.errors import NoConvergence, SingularMatrix, StepUnderflow
from detline.numcore import (
    LogDet,
    as_cmatrix,
    gauss_panels,
    lu_logdet,
    quad,
    rk_integrate,
    solve,
)


def random_well_conditioned(rng, n, cond_cap=1e3):
    """Random complex matrix with controlled condition number."""
    q1, _ = np.linalg.qr(rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)))
    q2, _ = np.linalg.qr(rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)))
    s = np.exp(rng.uniform(0, np.log(cond_cap), size=n))
    return q1 @ np.diag(s / s.max()) @ q2


class TestLuLogdet:
    def test_identity(self):
        ld = lu_logdet(np.eye(2))
        assert ld.log_modulus == pytest.approx(0.0, abs=1e-14)
        assert ld.phase == pytest.approx(0.0, abs=1e-14)

    def test_diagonal(self):
        ld = lu_logdet(np.diag([2.0, 3.0]))
        assert ld.log_modulus == pytest.approx(np.log(6.0), rel=1e-14)
        assert ld.phase == pytest.approx(0.0, abs=1e-14)

    def test_swap_has_phase_pi(self):
        ld = lu_logdet(np.array([[0.0, 1.0], [1.0, 0.0]]))
        assert ld.log_modulus == pytest.approx(0.0, abs=1e-14)
        assert ld.phase == pytest.approx(np.pi, rel=1e-14)

    def test_reconstructs_determinant(self):
        rng = np.random.default_rng(7)
        for n in (1, 2, 3, 5, 8):
            m = random_well_conditioned(rng, n)
            ld = lu_logdet(m)
            assert ld.to_complex() == pytest.approx(np.linalg.det(m), rel=1e-12)

    def test_phase_in_principal_branch(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            ld = lu_logdet(random_well_conditioned(rng, 4))
            assert -np.pi < ld.phase <= np.pi

    def test_singular_raises(self):
        with pytest.raises(SingularMatrix):
            lu_logdet(np.array([[1.0, 2.0], [2.0, 4.0]]))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 8), st.integers(0, 10_000))
    def test_log_modulus_multiplicative(self, n, seed):
        rng = np.random.default_rng(seed)
        a = random_well_conditioned(rng, n)
        b = random_well_conditioned(rng, n)
        lhs = lu_logdet(a @ b).log_modulus
        rhs = lu_logdet(a).log_modulus + lu_logdet(b).log_modulus
        assert lhs == pytest.approx(rhs, abs=1e-10)


class TestSolve:
    def test_identity(self):
        b = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert np.allclose(solve(np.eye(2), b), b)

    def test_diagonal(self):
        x = solve(np.diag([2.0, 4.0]), np.eye(2))
        assert np.allclose(x, np.diag([0.5, 0.25]))

    def test_multiply_back(self):
        rng = np.random.default_rng(11)
        m = random_well_conditioned(rng, 6)
        x = solve(m, m)
        assert np.max(np.abs(x - np.eye(6))) < 1e-10

    @settings(max_examples=25, deadline=None)
    @given(st.integers(2, 7), st.integers(0, 10_000))
    def test_residual_bound(self, n, seed):
        rng = np.random.default_rng(seed)
        m = random_well_conditioned(rng, n, cond_cap=1e6)
        b = rng.normal(size=(n, 2)) + 1j * rng.normal(size=(n, 2))
        x = solve(m, b)
        assert np.linalg.norm(m @ x - b) <= 1e-10 * np.linalg.norm(b)

    def test_singular_raises(self):
        with pytest.raises(SingularMatrix):
            solve(np.zeros((2, 2)), np.eye(2))


class TestRkIntegrate:
    def test_constant_state(self):
        res = rk_integrate(lambda x, y: np.zeros_like(y), 0.0, 1.0, np.eye(3), 1e-10)
        assert np.allclose(res.y, np.eye(3))
        assert res.rejected == 0

    def test_scalar_exponential(self):
        res = rk_integrate(lambda x, y: y, 0.0, 1.0, np.array([[1.0]]), 1e-10)
        assert res.y[0, 0] == pytest.approx(np.e, rel=1e-9)

    def test_matrix_exponential_oracle(self):
        a = np.array([[0.0, 1.0], [1.0, 0.0]])
        res = rk_integrate(lambda x, y: a @ y, 0.0, 1.0, np.eye(2), 1e-10)
        expected = scipy.linalg.expm(a)  # [[cosh 1, sinh 1], [sinh 1, cosh 1]]
        assert np.allclose(res.y, expected, rtol=1e-9)
        assert np.allclose(expected, [[np.cosh(1), np.sinh(1)], [np.sinh(1), np.cosh(1)]])

    def test_fixed_step_order_at_least_four(self):
        # error ratio under step halving on y' = y must reflect order >= 4
        errs = []
        for h in (0.1, 0.05):
            res = rk_integrate(
                lambda x, y: y, 0.0, 1.0, np.array([[1.0]]), 1e6,
                max_step=h, first_step=h,
            )
            errs.append(abs(res.y[0, 0] - np.e))
        assert errs[0] / errs[1] > 2 ** 4

    def test_tolerance_halving_monotone(self):
        errors = []
        for tol in (1e-6, 5e-7, 2.5e-7, 1.25e-7):
            res = rk_integrate(lambda x, y: y, 0.0, 1.0, np.array([[1.0]]), tol)
            errors.append(abs(res.y[0, 0] - np.e))
        assert all(e1 >= e2 * 0.99 for e1, e2 in zip(errors, errors[1:]))

    def test_oscillatory_against_scipy(self):
        a = np.array([[0.0, 1.0], [-25.0, 0.0]])
        res = rk_integrate(lambda x, y: a @ y, 0.0, 2.0, np.eye(2), 1e-11)
        assert np.allclose(res.y, scipy.linalg.expm(2.0 * a), atol=1e-8)

    def test_checkpoints_recorded(self):
        res = rk_integrate(
            lambda x, y: y, 0.0, 1.0, np.array([[1.0]]), 1e-10,
            checkpoints=[0.25, 0.5, 0.75],
        )
        xs = [c[0] for c in res.checkpoints]
        assert xs == [0.25, 0.5, 0.75]
        for x, y in res.checkpoints:
            assert y[0, 0] == pytest.approx(np.exp(x), rel=1e-9)

    def test_step_underflow(self):
        def stiff_blowup(x, y):
            return y / (1.0 - x) ** 2

        with np.errstate(all="ignore"), pytest.raises(StepUnderflow):
            rk_integrate(stiff_blowup, 0.0, 1.0, np.array([[1.0]]), 1e-10)

    def test_batched_state(self):
        zs = np.array([1.0, 2.0, 3.0])
        y0 = np.tile(np.eye(2), (3, 1, 1))
        a = np.array([[0.0, 1.0], [0.0, 0.0]])

        def deriv(x, y):
            return (a + zs[:, None, None] * np.eye(2)) @ y

        res = rk_integrate(deriv, 0.0, 1.0, y0, 1e-10)
        for z, yb in zip(zs, res.y):
            assert np.allclose(yb, scipy.linalg.expm(a + z * np.eye(2)), rtol=1e-8)


class TestQuad:
    def test_constant(self):
        assert quad(lambda x: 1.0, 0.0, 1.0, 1e-12) == pytest.approx(1.0, abs=1e-12)

    def test_linear(self):
        assert quad(lambda x: x, 0.0, 1.0, 1e-12) == pytest.approx(0.5, abs=1e-12)

    def test_greens_diagonal_matches_series(self):
        # integral of the classical diagonal kernel equals the eigenvalue sum
        val = quad(
            lambda t: np.sinh(t) * np.sinh(1.0 - t) / np.sinh(1.0), 0.0, 1.0, 1e-12
        )
        series = sum(1.0 / (k ** 2 * np.pi ** 2 + 1.0) for k in range(1, 2_000_000))
        series += 1.0 / (np.pi ** 2 * 2_000_000)  # integral tail estimate
        assert val.real == pytest.approx(series, abs=1e-7)
        assert val.real == pytest.approx(0.5 / np.tanh(1.0) - 0.5, abs=1e-12)

    def test_complex_integrand(self):
        val = quad(lambda x: np.exp(1j * x), 0.0, np.pi, 1e-12)
        assert val == pytest.approx(2j, abs=1e-10)

    def test_no_convergence(self):
        with pytest.raises(NoConvergence):
            quad(lambda x: np.sin(1.0 / (x + 1e-9)), 0.0, 1.0, 1e-14, max_intervals=8)


class TestGaussPanels:
    def test_vectorized_exp(self):
        val = gauss_panels(np.exp, np.linspace(0, 1, 5), order=8)
        assert val == pytest.approx(np.e - 1.0, rel=1e-12)

    def test_trailing_axes(self):
        val = gauss_panels(lambda x: np.stack([x, x ** 2], axis=-1),
                           [0.0, 0.5, 1.0], order=6)
        assert np.allclose(val, [0.5, 1.0 / 3.0])


class TestValidation:
    def test_as_cmatrix_rejects_nan(self):
        with pytest.raises(ValueError):
            as_cmatrix(np.array([[np.nan, 0.0], [0.0, 1.0]]))

    def test_logdet_roundtrip_dataclass(self):
        ld = LogDet(np.log(2.0), np.pi / 3)
        assert ld.to_complex() == pytest.approx(2.0 * np.exp(1j * np.pi / 3))
