"""Per-point graph geometry against analytic cases and finite differences."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from curveflow.geometry import (F_and_Fij, G_derivatives, curvature_matrix,
                                graph_point, graph_quantities, jacobi_eigh,
                                principal_curvatures, speed, sphere_cap_forcing)
from curveflow.symfunc import ConeViolationError, CurvatureFunction

RNG = np.random.default_rng(77)
COMBINED = CurvatureFunction.combined(2, 1)


def random_convex_point(rng, grad_scale=1.5, n=2):
    du = rng.normal(size=n) * grad_scale
    m = rng.normal(size=(n, n))
    d2u = m @ m.T + 0.3 * np.eye(n)
    return du, d2u


class TestGraphQuantities:
    def test_flat_gradient(self):
        w, gamma, gamma_inv = graph_quantities(np.zeros(2))
        assert w == 1.0
        assert np.allclose(gamma, np.eye(2))
        assert np.allclose(gamma_inv, np.eye(2))

    def test_three_four_slope(self):
        du = np.array([3.0, 4.0])
        w, gamma, gamma_inv = graph_quantities(du)
        assert w == pytest.approx(np.sqrt(26.0), rel=1e-15)
        assert np.abs(gamma @ gamma_inv - np.eye(2)).max() <= 1e-14

    def test_square_root_of_metric(self):
        for _ in range(100):
            n = int(RNG.integers(2, 5))
            du = RNG.normal(size=n) * 2.5
            w, gamma, gamma_inv = graph_quantities(du)
            metric = np.eye(n) + np.outer(du, du)
            assert np.abs(gamma_inv @ gamma_inv - metric).max() <= 1e-12
            assert np.abs(gamma @ gamma_inv - np.eye(n)).max() <= 1e-13


class TestCurvatureMatrix:
    def test_identity_case(self):
        a = curvature_matrix(np.zeros(2), np.eye(2))
        assert np.allclose(a, np.eye(2), atol=1e-15)

    def test_sphere_curvatures(self):
        rho = 2.0
        for n in (2, 3):
            for _ in range(10):
                x = RNG.normal(size=n)
                x *= RNG.uniform(0.0, 0.9) / max(np.linalg.norm(x), 1e-12)
                s = np.sqrt(rho * rho - x @ x)
                du = x / s
                d2u = np.eye(n) / s + np.outer(x, x) / s ** 3
                kappa, _ = principal_curvatures(curvature_matrix(du, d2u))
                assert np.allclose(kappa, 1.0 / rho, atol=1e-12)

    def test_diagonal_hessian_zero_gradient(self):
        a = curvature_matrix(np.zeros(2), np.diag([1.0, 2.0]))
        kappa, _ = principal_curvatures(a)
        assert np.allclose(kappa, [1.0, 2.0], atol=1e-14)

    def test_symmetric_output(self):
        for _ in range(50):
            du, d2u = random_convex_point(RNG, grad_scale=5.0)
            a = curvature_matrix(du, d2u)
            assert np.abs(a - a.T).max() <= 1e-13

    def test_convexity_transfers_to_spectrum(self):
        for _ in range(50):
            du, d2u = random_convex_point(RNG, grad_scale=5.0)
            kappa, _ = principal_curvatures(curvature_matrix(du, d2u))
            assert kappa.min() > 0.0


class TestEigensolver:
    def test_diagonal(self):
        lam, q = principal_curvatures(np.diag([3.0, 1.0, 2.0]))
        assert np.allclose(lam, [1.0, 2.0, 3.0])

    def test_two_by_two_hand_case(self):
        lam, q = principal_curvatures(np.array([[2.0, 1.0], [1.0, 2.0]]))
        assert np.allclose(lam, [1.0, 3.0], atol=1e-14)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.0, 2 * np.pi))
    def test_rotation_invariance(self, angle):
        c, s = np.cos(angle), np.sin(angle)
        q = np.array([[c, -s], [s, c]])
        a = q @ np.diag([1.0, 2.0]) @ q.T
        lam, _ = principal_curvatures(a)
        assert np.allclose(lam, [1.0, 2.0], atol=1e-12)

    def test_matches_lapack_for_small_matrices(self):
        for n in range(2, 9):
            for _ in range(15):
                m = RNG.normal(size=(n, n))
                a = 0.5 * (m + m.T)
                lam, q = jacobi_eigh(a)
                want = np.linalg.eigvalsh(a)
                assert np.allclose(lam, want, atol=1e-12 * max(1, np.abs(want).max()))
                # eigen equation and orthonormality
                assert np.abs(a @ q - q @ np.diag(lam)).max() <= 1e-12 * max(1, np.abs(lam).max())
                assert np.abs(q.T @ q - np.eye(n)).max() <= 1e-12


class TestSpeedFunction:
    def test_identity_matrix_value(self):
        fval, fij = F_and_Fij(np.eye(2), COMBINED)
        assert fval == pytest.approx(1.0, abs=1e-14)
        grads = COMBINED.gradient(np.ones(2))
        assert np.allclose(np.linalg.eigvalsh(fij), sorted(grads), atol=1e-13)

    def test_diagonal_case(self):
        a = np.diag([0.5, 2.0])
        fval, fij = F_and_Fij(a, COMBINED)
        grads = COMBINED.gradient(np.array([0.5, 2.0]))
        assert np.allclose(np.diag(fij), grads, atol=1e-13)
        assert abs(fij[0, 1]) <= 1e-13

    def test_matches_directional_differences(self):
        for _ in range(60):
            m = RNG.normal(size=(2, 2))
            a = m @ m.T + 0.4 * np.eye(2)
            fval, fij = F_and_Fij(a, COMBINED)
            sdir = RNG.normal(size=(2, 2))
            sdir = 0.5 * (sdir + sdir.T)
            eps = 1e-6
            fp, _ = F_and_Fij(a + eps * sdir, COMBINED)
            fm, _ = F_and_Fij(a - eps * sdir, COMBINED)
            fd = (fp - fm) / (2 * eps)
            assert np.tensordot(fij, sdir) == pytest.approx(fd, rel=1e-5, abs=1e-10)

    def test_orthogonal_invariance_and_homogeneity(self):
        for _ in range(40):
            m = RNG.normal(size=(2, 2))
            a = m @ m.T + 0.4 * np.eye(2)
            theta = RNG.uniform(0, 2 * np.pi)
            c, s = np.cos(theta), np.sin(theta)
            q = np.array([[c, -s], [s, c]])
            f0, _ = F_and_Fij(a, COMBINED)
            f1, _ = F_and_Fij(q @ a @ q.T, COMBINED)
            assert f1 == pytest.approx(f0, rel=1e-12)
            t = RNG.uniform(0.3, 4.0)
            ft, _ = F_and_Fij(t * a, COMBINED)
            assert ft == pytest.approx(t * f0, rel=1e-12)

    def test_positive_definite_derivative(self):
        for _ in range(40):
            du, d2u = random_convex_point(RNG)
            point = graph_point(du, d2u, COMBINED)
            assert np.linalg.eigvalsh(point.f_matrix).min() > 0.0

    def test_cone_violation_carries_spectrum(self):
        a = np.diag([1.0, -0.5])
        with pytest.raises(ConeViolationError) as err:
            F_and_Fij(a, COMBINED)
        assert err.value.min_entry == pytest.approx(-0.5)

    def test_speed_values(self):
        forcing = sphere_cap_forcing(1.0, 2.0)
        point = graph_point(np.zeros(2), np.eye(2), COMBINED)
        x = np.array([0.1, 0.2])
        assert speed(point, forcing, x, -1.9) == pytest.approx(1.0 - 0.5)
        # zero forcing residual: craft Phi == F through the z slope
        val = point.f_value
        from curveflow.geometry import affine_forcing
        f2 = affine_forcing(phi_at_zero=val, phi_slope=0.0,
                            flux_at_zero=0.0, flux_slope=-1.0)
        assert speed(point, f2, x, 0.0) == pytest.approx(0.0, abs=1e-15)


class TestOperatorDerivatives:
    def test_flat_gradient_reduction(self):
        du = np.zeros(2)
        m = RNG.normal(size=(2, 2))
        d2u = m @ m.T + 0.5 * np.eye(2)
        gij, gs = G_derivatives(du, d2u, COMBINED)
        _, fij = F_and_Fij(curvature_matrix(du, d2u), COMBINED)
        assert np.abs(gij - fij).max() <= 1e-13
        assert np.abs(gs).max() <= 1e-13

    def test_hessian_derivative_matches_fd(self):
        for _ in range(40):
            du, d2u = random_convex_point(RNG)
            gij, _ = G_derivatives(du, d2u, COMBINED)
            sdir = RNG.normal(size=(2, 2))
            sdir = 0.5 * (sdir + sdir.T)
            eps = 1e-6

            def g_of(h):
                a = curvature_matrix(du, h)
                return F_and_Fij(a, COMBINED)[0]

            fd = (g_of(d2u + eps * sdir) - g_of(d2u - eps * sdir)) / (2 * eps)
            assert np.tensordot(gij, sdir) == pytest.approx(fd, rel=1e-4, abs=1e-9)

    def test_gradient_derivative_matches_fd(self):
        worst = 0.0
        for _ in range(60):
            du, d2u = random_convex_point(RNG)
            _, gs = G_derivatives(du, d2u, COMBINED)
            eps = 1e-6

            def g_of(grad):
                a = curvature_matrix(grad, d2u)
                return F_and_Fij(a, COMBINED)[0]

            for comp in range(2):
                dp, dm = du.copy(), du.copy()
                dp[comp] += eps
                dm[comp] -= eps
                fd = (g_of(dp) - g_of(dm)) / (2 * eps)
                scale = max(1e-9, abs(fd))
                worst = max(worst, abs(gs[comp] - fd) / scale)
        assert worst <= 1e-4

    def test_gradient_coupling_ratio_finite(self):
        # reported diagnostic: sum |G^s| relative to the speed value
        for _ in range(20):
            du, d2u = random_convex_point(RNG)
            _, gs = G_derivatives(du, d2u, COMBINED)
            fval, _ = F_and_Fij(curvature_matrix(du, d2u), COMBINED)
            ratio = np.abs(gs).sum() / fval
            assert np.isfinite(ratio)


class TestGraphPointData:
    def test_fields_consistent(self):
        du, d2u = random_convex_point(RNG)
        point = graph_point(du, d2u, COMBINED)
        assert point.nu_vert == pytest.approx(1.0 / point.w)
        assert 0.0 < point.nu_vert <= 1.0
        assert point.w >= 1.0
        assert np.allclose(point.second_fundamental, d2u / point.w)
        assert np.abs(point.gamma_inv @ point.gamma_inv
                      - (np.eye(2) + np.outer(du, du))).max() <= 1e-12
