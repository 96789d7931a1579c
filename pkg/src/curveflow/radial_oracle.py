"""Independent 1-D solver for radially symmetric flows on a disk.

For radial graphs u(r) the curvature matrix diagonalizes into the profile
curvature u'' / w^3 and the rotational curvature u' / (r w) with
multiplicity n - 1, so the full flow collapses to one spatial dimension in
any ambient dimension.  The solver shares no code with the 2-D engine and
serves as its brute-force oracle; ``lift_to_grid`` pushes a radial profile
back onto the polar grid through cubic interpolation.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .domain_grid import (Grid, ScalarField, cubic_spline_eval,
                          cubic_spline_second_derivs)
from .flow_engine import (CONE_FLOOR, MAX_DT_HALVINGS, MONOTONE_SLACK,
                          SPEED_BOUND_SLACK, FlowBreakdownError, MonitorRecord)
from .geometry import ForcingSpec
from .symfunc import CurvatureFunction


def radial_curvatures(r, du, d2u):
    """(kappa_radial, kappa_tangential) of a radial graph at radius r > 0.

    At the origin both tend to u''(0); the staggered grid never queries
    r = 0 so the limit is left to the caller.
    """
    w2 = 1.0 + du * du
    w = np.sqrt(w2)
    k_rad = d2u / (w2 * w)
    k_tan = du / (r * w)
    return k_rad, k_tan


def _radial_sigma_table(n: int):
    """binom(n-1, k) tables for sigma_k of (a, b, ..., b) with n-1 copies of b."""
    m = n - 1
    return np.array([math.comb(m, k) for k in range(n + 1)], dtype=float)


def radial_speed_value(f: CurvatureFunction, k_rad, k_tan):
    """Vectorized f at the radial curvature vector (k_rad, k_tan * (n-1)).

    Closed form through sigma_k(a, b..b) = C(m,k) b^k + a C(m,k-1) b^(k-1),
    m = n - 1; cross-checked against the generic evaluator in the tests.
    """
    n = f.n
    m = n - 1
    a = np.asarray(k_rad, dtype=float)
    b = np.asarray(k_tan, dtype=float)

    def sig(k):
        out = math.comb(m, k) * b ** k if k <= m else np.zeros_like(b)
        if k >= 1 and k - 1 <= m:
            out = out + a * math.comb(m, k - 1) * b ** (k - 1)
        return out

    def h(k):
        return sig(k) / math.comb(n, k)

    if f.family == "kth-root":
        val = h(f.k) ** (1.0 / f.k)
    elif f.family == "quotient":
        val = (sig(n) / h(f.l)) ** (1.0 / (n - f.l))
    else:
        gauss = sig(n) ** (1.0 / n)
        val = 0.5 * (gauss + (sig(n) / h(f.l)) ** (1.0 / (n - f.l)))
    return f.scale * val


def radial_speed_grad_rad(f: CurvatureFunction, k_rad, k_tan):
    """d f / d kappa_radial at the radial vector (drives the 1-D step bound)."""
    n = f.n
    m = n - 1
    a = np.asarray(k_rad, dtype=float)
    b = np.asarray(k_tan, dtype=float)

    def sig(k):
        out = math.comb(m, k) * b ** k if k <= m else np.zeros_like(b)
        if k >= 1 and k - 1 <= m:
            out = out + a * math.comb(m, k - 1) * b ** (k - 1)
        return out

    def dsig_da(k):
        # derivative in the first entry: sigma_{k-1} of the b-block
        return math.comb(m, k - 1) * b ** (k - 1) if 1 <= k <= m + 1 else np.zeros_like(b)

    val = radial_speed_value(f, k_rad, k_tan) / f.scale
    if f.family == "kth-root":
        k = f.k
        grad = val / k * dsig_da(k) / sig(k)
    elif f.family == "quotient":
        l = f.l
        glog = dsig_da(n) / sig(n)
        if l >= 1:
            glog = glog - dsig_da(l) / sig(l)
        grad = val / (n - l) * glog
    else:
        l = f.l
        gauss = sig(n) ** (1.0 / n)
        ggrad = gauss / n * dsig_da(n) / sig(n)
        quot = (sig(n) / (sig(l) / math.comb(n, l))) ** (1.0 / (n - l))
        glog = dsig_da(n) / sig(n)
        if l >= 1:
            glog = glog - dsig_da(l) / sig(l)
        grad = 0.5 * (ggrad + quot / (n - l) * glog)
    return f.scale * grad


@dataclass
class RadialConfig:
    radius: float
    n_points: int
    f: CurvatureFunction
    forcing: ForcingSpec
    u0: object  # callable(r) or array of point values
    sigma: float = 0.9
    tol_res: float = 1e-6
    t_max: float = 60.0
    monitor_cadence: int = 200
    label: str = "radial"


@dataclass
class RadialState:
    values: np.ndarray
    t: float = 0.0
    step_count: int = 0


@dataclass
class RadialResult:
    status: str
    state: RadialState
    r: np.ndarray
    records: list = field(default_factory=list)
    recorded: dict = field(default_factory=dict)
    monotone: bool = True
    speed_within_bounds: bool = True
    n_steps: int = 0
    wall_time: float = 0.0

    @property
    def converged(self) -> bool:
        return self.status == "converged"


class RadialEngine:
    """Staggered-grid explicit integrator for the radial reduction."""

    def __init__(self, config: RadialConfig):
        self.config = config
        N = config.n_points
        if N < 8:
            raise ValueError("need at least 8 radial points")
        self.h = 2.0 * config.radius / (2 * N - 1)
        self.r = (np.arange(N) + 0.5) * self.h
        if config.forcing.Phi_affine is None or config.forcing.phi_affine is None:
            raise ValueError("the radial engine requires z-affine forcing presets")
        phi_spatial, self.phi_b = config.forcing.Phi_affine
        self.phi_a = phi_spatial(self.r, np.zeros_like(self.r))
        flux_spatial, self.flux_b = config.forcing.phi_affine
        self.flux_a = float(np.atleast_1d(
            flux_spatial(np.array([config.radius]), np.array([0.0])))[0])
        self._a_freeze = None

    def initial_values(self) -> np.ndarray:
        u0 = self.config.u0
        if callable(u0):
            return np.asarray(u0(self.r), dtype=float)
        arr = np.asarray(u0, dtype=float)
        if arr.shape != self.r.shape:
            raise ValueError("initial radial data has the wrong length")
        return arr.copy()

    def eval(self, u):
        """(speed, w, k_rad, k_tan, residual) with the mirror/flux closure."""
        h = self.h
        flux = self.flux_a + self.flux_b * u[-1]
        ghost = u[-2] + 2.0 * h * flux
        up = np.empty(u.size + 2)
        up[1:-1] = u
        up[0] = u[0]  # even mirror across r = 0
        up[-1] = ghost
        du = (up[2:] - up[:-2]) / (2.0 * h)
        d2u = (up[2:] - 2.0 * up[1:-1] + up[:-2]) / (h * h)
        k_rad, k_tan = radial_curvatures(self.r, du, d2u)
        w = np.sqrt(1.0 + du * du)
        fval = radial_speed_value(self.config.f, np.maximum(k_rad, 0.0),
                                  np.maximum(k_tan, 1e-300))
        phi = self.phi_a + self.phi_b * u
        speed = w * (fval - phi)
        residual = float(np.max(np.abs(fval - phi)))
        return speed, w, k_rad, k_tan, residual, du

    def stable_dt(self, w, k_rad, k_tan) -> float:
        # d(speed)/d(u'') = f1 / w^2, so the explicit bound is h^2 w^2 / (2 f1)
        f1 = radial_speed_grad_rad(self.config.f, k_rad, k_tan)
        bound = self.h ** 2 * w * w / (2.0 * np.maximum(f1, 1e-30))
        return self.config.sigma * float(bound.min())

    def _monitor(self, state, speed, w, k_rad, k_tan, residual, du, dt):
        u = state.values
        h = self.h
        u_nunu = (2 * u[-1] - 5 * u[-2] + 4 * u[-3] - u[-4]) / (h * h)
        nu_vert = 1.0 / w
        if self._a_freeze is None:
            self._a_freeze = 0.5 * float(nu_vert.min())
        denom = nu_vert - self._a_freeze
        kmax = np.maximum(k_rad, k_tan)
        ratio = float(np.max(np.where(denom > 0, kmax / denom, np.inf)))
        return MonitorRecord(
            t=state.t, dt=dt,
            max_abs_speed=float(np.abs(speed).max()),
            min_speed=float(speed.min()),
            min_kappa=float(min(k_rad.min(), k_tan.min())),
            max_kappa=float(kmax.max()),
            nu_vert_min=float(nu_vert.min()),
            residual=residual,
            max_grad_interior=float(np.abs(du[:-1]).max()),
            max_grad_boundary=float(abs(du[-1])),
            max_u_nunu=float(u_nunu),
            max_abs_u_taunu=0.0,
            interior_ratio=ratio,
            barrier_min=float("nan"),
        )

    def run(self, record_times=()) -> RadialResult:
        cfg = self.config
        start = time.perf_counter()
        u = self.initial_values()
        state = RadialState(values=u, t=0.0)
        records = []
        recorded = {}
        pending = sorted(record_times)

        speed, w, k_rad, k_tan, residual, du = self.eval(u)
        if min(k_rad.min(), k_tan.min()) <= 0.0:
            j = int(np.argmin(np.minimum(k_rad, k_tan)))
            raise FlowBreakdownError(
                f"radial surface not strictly convex at r={self.r[j]:.4g}",
                node=(j,), spectrum=(float(k_rad[j]), float(k_tan[j])), t=0.0)

        hi0 = max(float(speed.max()), 0.0)
        lo0 = min(float(speed.min()), 0.0)
        monotone = True
        speed_ok = True
        status = "timeout"
        dt = self.stable_dt(w, k_rad, k_tan)
        consecutive = 0
        step_idx = 0

        while True:
            if float(speed.max()) > hi0 + SPEED_BOUND_SLACK or \
               float(speed.min()) < lo0 - SPEED_BOUND_SLACK:
                speed_ok = False
            if step_idx % cfg.monitor_cadence == 0 or step_idx == 1:
                records.append(self._monitor(state, speed, w, k_rad, k_tan,
                                             residual, du, dt))
                if residual < cfg.tol_res:
                    consecutive += 1
                    if consecutive >= 2:
                        status = "converged"
                        break
                else:
                    consecutive = 0
            if state.t >= cfg.t_max:
                break
            if step_idx % 50 == 0 and step_idx > 0:
                dt = self.stable_dt(w, k_rad, k_tan)

            local_dt = dt
            if pending:
                gap = pending[0] - state.t
                if gap <= 1e-14:
                    recorded[pending.pop(0)] = RadialState(values=state.values.copy(),
                                                           t=state.t, step_count=step_idx)
                elif gap < local_dt:
                    local_dt = gap

            accepted = False
            for _ in range(MAX_DT_HALVINGS + 1):
                trial = state.values + local_dt * speed
                sp2, w2, kr2, kt2, res2, du2 = self.eval(trial)
                floor = CONE_FLOOR * max(1.0, float(np.maximum(kr2, kt2).max()))
                if min(kr2.min(), kt2.min()) > floor:
                    accepted = True
                    break
                local_dt *= 0.5
            if not accepted:
                j = int(np.argmin(np.minimum(kr2, kt2)))
                raise FlowBreakdownError(
                    f"radial flow breakdown at t={state.t + local_dt:.4g}, r={self.r[j]:.4g}",
                    node=(j,), spectrum=(float(kr2[j]), float(kt2[j])),
                    t=state.t + local_dt)

            if float(speed.min()) * local_dt < MONOTONE_SLACK:
                monotone = False
            state = RadialState(values=trial, t=state.t + local_dt,
                                step_count=step_idx + 1)
            speed, w, k_rad, k_tan, residual, du = sp2, w2, kr2, kt2, res2, du2
            step_idx += 1

        records.append(self._monitor(state, speed, w, k_rad, k_tan, residual, du, dt))
        return RadialResult(status=status, state=state, r=self.r.copy(),
                            records=records, recorded=recorded, monotone=monotone,
                            speed_within_bounds=speed_ok, n_steps=step_idx,
                            wall_time=time.perf_counter() - start)


def run_radial_flow(config: RadialConfig, **kwargs) -> RadialResult:
    return RadialEngine(config).run(**kwargs)


# ---------------------------------------------------------------------------
# Lifting 1-D profiles onto the 2-D grid
# ---------------------------------------------------------------------------


def lift_to_grid(radial_values, radial_r, grid: Grid) -> ScalarField:
    """Interpolate a radial profile onto the polar grid's real rings.

    Cubic interpolation on the evenly reflected profile keeps the error an
    order below the engine's own spatial accuracy.  Disk grids only.
    """
    if not grid.domain.is_disk:
        raise ValueError("radial lifting requires a disk domain")
    radial_r = np.asarray(radial_r, dtype=float)
    radial_values = np.asarray(radial_values, dtype=float)
    # even reflection through r = 0 enforces the symmetry slope condition
    xs = np.concatenate([-radial_r[2::-1], radial_r])
    ys = np.concatenate([radial_values[2::-1], radial_values])
    second = cubic_spline_second_derivs(xs, ys)
    rr = np.hypot(grid.x[:-1], grid.y[:-1])
    rr = np.minimum(rr, radial_r[-1])
    vals = cubic_spline_eval(xs, ys, second, rr.ravel()).reshape(rr.shape)
    return grid.field(vals)


def radial_average(field: ScalarField, grid: Grid):
    """Ring averages of a 2-D field, for round-trip comparisons."""
    vals = field.values[:-1]
    return np.hypot(grid.x[:-1, 0], grid.y[:-1, 0]), vals.mean(axis=1)
