"""Radial reference solver and its agreement with the generic machinery."""

import numpy as np
import pytest

import curveflow as cf
from curveflow.radial_oracle import (RadialConfig, RadialEngine, lift_to_grid,
                                     radial_average, radial_curvatures,
                                     radial_speed_grad_rad, radial_speed_value,
                                     run_radial_flow)

RNG = np.random.default_rng(99)
R, RHO_S = 1.0, 2.0


def sphere_u0(delta):
    def u0(r):
        cap = -np.sqrt(RHO_S ** 2 - r ** 2)
        return cap - delta * (0.25 + 1.0 / (2.0 * R) - r ** 2 / (4.0 * R ** 2))
    return u0


def radial_config(n=64, delta=0.15, **kw):
    kw.setdefault("tol_res", 1e-6)
    kw.setdefault("t_max", 60.0)
    return RadialConfig(radius=R, n_points=n, f=cf.CurvatureFunction.combined(2, 1),
                        forcing=cf.sphere_cap_forcing(R, RHO_S),
                        u0=sphere_u0(delta), **kw)


class TestCurvatureFormulas:
    def test_sphere_profile(self):
        r = np.linspace(0.05, 0.95, 40)
        du = r / np.sqrt(RHO_S ** 2 - r ** 2)
        d2u = RHO_S ** 2 / (RHO_S ** 2 - r ** 2) ** 1.5
        k_rad, k_tan = radial_curvatures(r, du, d2u)
        assert np.allclose(k_rad, 1.0 / RHO_S, atol=1e-13)
        assert np.allclose(k_tan, 1.0 / RHO_S, atol=1e-13)

    def test_quadratic_profile(self):
        r = np.array([0.3, 0.7])
        du, d2u = r, np.ones_like(r)
        k_rad, k_tan = radial_curvatures(r, du, d2u)
        assert np.allclose(k_rad, (1 + r ** 2) ** -1.5)
        assert np.allclose(k_tan, (1 + r ** 2) ** -0.5)

    def test_origin_limit(self):
        # both curvatures approach u''(0) as r -> 0 for even profiles
        c = 0.8
        r = np.array([1e-6])
        k_rad, k_tan = radial_curvatures(r, c * r, np.array([c]))
        assert k_rad[0] == pytest.approx(c, rel=1e-9)
        assert k_tan[0] == pytest.approx(c, rel=1e-9)


class TestSpeedValueAgainstGeneric:
    @pytest.mark.parametrize("n", [2, 3, 5])
    def test_matches_symmetric_function_module(self, n):
        fams = [cf.CurvatureFunction.combined(n, 1),
                cf.CurvatureFunction.quotient(n, 1),
                cf.CurvatureFunction.kth_root(n, min(2, n))]
        for f in fams:
            for _ in range(25):
                a = float(np.exp(RNG.uniform(-1, 1)))
                b = float(np.exp(RNG.uniform(-1, 1)))
                lam = np.array([a] + [b] * (n - 1))
                want = f.value(lam)
                got = radial_speed_value(f, a, b)
                assert got == pytest.approx(want, rel=1e-12)
                want_grad = f.gradient(lam)[0]
                got_grad = radial_speed_grad_rad(f, a, b)
                assert got_grad == pytest.approx(want_grad, rel=1e-10)

    def test_vectorized(self):
        f = cf.CurvatureFunction.combined(3, 1)
        a = np.exp(RNG.uniform(-1, 1, 30))
        b = np.exp(RNG.uniform(-1, 1, 30))
        vals = radial_speed_value(f, a, b)
        for i in range(30):
            lam = np.array([a[i], b[i], b[i]])
            assert vals[i] == pytest.approx(f.value(lam), rel=1e-12)


class TestRadialFlow:
    def test_monitored_convergence(self):
        res = run_radial_flow(radial_config(64, tol_res=4e-6))
        assert res.converged
        assert res.monotone
        assert res.speed_within_bounds
        assert all(r.min_kappa > 0 for r in res.records)
        h = 2.0 * R / (2 * 64 - 1)
        ustar = -np.sqrt(RHO_S ** 2 - res.r ** 2)
        assert np.abs(res.state.values - ustar).max() <= 30 * h * h

    def test_deep_stationary_is_inert(self):
        # relax far below truncation, then check one step barely moves
        cfg = radial_config(64)
        eng = RadialEngine(cfg)
        u = eng.initial_values()
        for _ in range(200000):
            speed, w, k_rad, k_tan, residual, du = eng.eval(u)
            if residual < 2e-10:
                break
            dt = eng.stable_dt(w, k_rad, k_tan)
            u = u + dt * speed
        assert residual < 2e-10
        dt = eng.stable_dt(w, k_rad, k_tan)
        step = np.abs(dt * speed).max()
        assert step <= 1e-10

    def test_dimension_three_sphere_stationary(self):
        # the cap is stationary in any ambient dimension with Phi = 1/rho
        cfg = RadialConfig(radius=R, n_points=48,
                           f=cf.CurvatureFunction.combined(3, 1),
                           forcing=cf.sphere_cap_forcing(R, RHO_S),
                           u0=sphere_u0(0.0), tol_res=1e-5, t_max=5.0)
        eng = RadialEngine(cfg)
        u = eng.initial_values()
        speed, w, k_rad, k_tan, residual, du = eng.eval(u)
        h = 2.0 * R / (2 * 48 - 1)
        assert residual <= 10 * h * h  # truncation only
        assert np.allclose(k_rad, 0.5, atol=20 * h * h)
        assert np.allclose(k_tan, 0.5, atol=20 * h * h)

    def test_breakdown_on_nonconvex_profile(self):
        cfg = radial_config(48)
        cfg = RadialConfig(**{**cfg.__dict__,
                              "u0": lambda r: -2.0 + 0.3 * np.cos(4 * r)})
        with pytest.raises(cf.FlowBreakdownError) as err:
            run_radial_flow(cfg)
        assert err.value.node is not None

    def test_record_times(self):
        res = run_radial_flow(radial_config(48, t_max=0.3),
                              record_times=(0.1, 0.2))
        assert set(res.recorded) == {0.1, 0.2}
        assert res.recorded[0.1].t == pytest.approx(0.1, abs=1e-12)


class TestLifting:
    def test_constant_profile(self):
        grid = cf.Grid(cf.Domain(1.0, 1.0), 16, 16)
        r = (np.arange(32) + 0.5) * (2.0 / 63)
        lifted = lift_to_grid(np.full(32, 3.25), r, grid)
        assert np.abs(lifted.values[:-1] - 3.25).max() <= 1e-12

    def test_matched_resolution_is_knot_exact(self):
        # ring radii coincide with the radial nodes, so the lift reduces to
        # evaluation at the spline knots
        n = 32
        grid = cf.Grid(cf.Domain(1.0, 1.0), n, n)
        h = 2.0 * R / (2 * n - 1)
        r = (np.arange(n) + 0.5) * h
        prof = -np.sqrt(RHO_S ** 2 - r ** 2)
        lifted = lift_to_grid(prof, r, grid)
        want = cf.sphere_cap_exact(grid, RHO_S)
        assert np.abs(lifted.values[:-1] - want).max() <= 1e-13

    def test_sphere_profile_interpolation_accuracy(self):
        # off-knot evaluation: quartic-rate interior, and everywhere far
        # below the engine's own h^2 error budget
        grid = cf.Grid(cf.Domain(1.0, 1.0), 37, 16)
        want = cf.sphere_cap_exact(grid, RHO_S)
        rr = np.hypot(grid.x[:-1], grid.y[:-1])
        sups, interiors = [], []
        for n in (24, 48, 96):
            h = 2.0 * R / (2 * n - 1)
            r = (np.arange(n) + 0.5) * h
            prof = -np.sqrt(RHO_S ** 2 - r ** 2)
            lifted = lift_to_grid(prof, r, grid)
            err = np.abs(lifted.values[:-1] - want)
            sups.append((h, err.max()))
            interiors.append(err[rr <= r[-2]].max())
        for h, sup in sups:
            assert sup <= 0.05 * h * h
        assert interiors[0] / interiors[2] >= 30.0

    def test_round_trip_through_ring_average(self):
        n = 32
        grid = cf.Grid(cf.Domain(1.0, 1.0), n, n)
        h = 2.0 * R / (2 * n - 1)
        r = (np.arange(n) + 0.5) * h
        prof = np.cos(1.3 * r)
        lifted = lift_to_grid(prof, r, grid)
        r_back, avg = radial_average(lifted, grid)
        # grid ring radii coincide with the radial nodes on the disk
        assert np.allclose(r_back, r, atol=1e-14)
        assert np.abs(avg - prof).max() <= 1e-6

    def test_requires_disk(self):
        grid = cf.Grid(cf.Domain(2.0, 1.0), 16, 16)
        with pytest.raises(ValueError):
            lift_to_grid(np.ones(16), np.linspace(0.1, 1, 16), grid)


class TestOracleEquivalence:
    def test_matched_time_agreement(self):
        times = (0.1, 0.25)
        n = 32
        cfg2d = cf.sphere_cap_preset(n, n, delta=0.15, t_max=0.3)
        eng2d = cf.FlowEngine(cfg2d)
        res2d = eng2d.run(record_times=times)
        rad = RadialEngine(radial_config(n, t_max=0.3))
        res1d = rad.run(record_times=times)
        for t in times:
            lifted = lift_to_grid(res1d.recorded[t].values, rad.r, eng2d.grid)
            gap = np.abs(res2d.recorded[t].field.values[:-1]
                         - lifted.values[:-1]).max()
            assert gap <= 5e-6  # measured ~2e-6 at this resolution, h^2 scale
