"""Explicit time integration of the graph curvature flow with monitors.

The evolution is du/dt = w (F(A[u]) - Phi(x, u)) on the grid interior and
boundary, with the ghost ring re-solved after every update so the outward
normal derivative equals phi(x, u).  Steps are forward Euler at the radial
parabolic limit; on the pole-stiff rings the azimuthal diffusion advances
through an exact per-mode integrating factor so the polar coordinate
singularity does not collapse the step size (see Grid's pole plan).

Alongside the update, the engine certifies the qualitative behaviour the
continuous problem guarantees: speed extrema never grow, the solution stays
strictly convex and monotone when started from an admissible supersolution,
the gradient peaks on the boundary, and the collar barrier field stays
nonnegative.  A converged run cross-checks against a direct stationary
solve (Legendre super-stepped pseudo-time on the same stage evaluation).
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .domain_grid import Domain, Grid, ScalarField
from .geometry import ForcingSpec
from .symfunc import CurvatureFunction

CONE_FLOOR = 1e-14
MAX_DT_HALVINGS = 8
DT_REFRESH_STEPS = 25
MONOTONE_SLACK = -1e-10
SPEED_BOUND_SLACK = 1e-8


class FlowBreakdownError(RuntimeError):
    """The discrete surface left the convexity cone and halving dt did not help."""

    def __init__(self, message, node=None, xy=None, spectrum=None, t=None):
        super().__init__(message)
        self.node = node
        self.xy = xy
        self.spectrum = spectrum
        self.t = t


class IncompatibleInitialDataError(ValueError):
    """Initial data violates the boundary flux compatibility requirement."""


class ConfigError(ValueError):
    pass


@dataclass
class BarrierParams:
    """Collar diagnostic parameters; None fields are resolved from the domain."""

    a_bar: float = 2.5
    mu: float | None = None
    quad_coef: float | None = None  # coefficient of d^2 in q; default 1/(8 mu)


@dataclass
class FlowConfig:
    domain: Domain
    n_rho: int
    n_theta: int
    f: CurvatureFunction
    forcing: ForcingSpec
    u0: object = None  # callable(x, y), array of node values, or ScalarField
    sigma: float = 0.9
    tol_res: float = 1e-6
    t_max: float = 60.0
    monitor_cadence: int = 50
    barrier: BarrierParams | None = None
    compat_tol: float | None = None  # default 50 h_rho^2
    label: str = "run"

    def __post_init__(self):
        if not 0.0 < self.sigma <= 1.0:
            raise ConfigError("dt safety factor must lie in (0, 1]")
        if self.tol_res <= 0.0:
            raise ConfigError("residual tolerance must be positive")
        if self.monitor_cadence < 1:
            raise ConfigError("monitor cadence must be >= 1")


MONITOR_FIELDS = (
    "t", "dt", "max_abs_speed", "min_speed", "min_kappa", "max_kappa",
    "nu_vert_min", "residual", "max_grad_interior", "max_grad_boundary",
    "max_u_nunu", "max_abs_u_taunu", "interior_ratio", "barrier_min",
)


@dataclass
class MonitorRecord:
    t: float
    dt: float
    max_abs_speed: float
    min_speed: float
    min_kappa: float
    max_kappa: float
    nu_vert_min: float
    residual: float
    max_grad_interior: float
    max_grad_boundary: float
    max_u_nunu: float
    max_abs_u_taunu: float
    interior_ratio: float
    barrier_min: float

    def as_row(self):
        return [getattr(self, name) for name in MONITOR_FIELDS]


@dataclass
class FlowState:
    field: ScalarField
    step_count: int = 0
    last_monitor: MonitorRecord | None = None

    @property
    def t(self) -> float:
        return self.field.t


@dataclass
class InitialReport:
    compat_residual: float
    compat_tol: float
    supersolution_margin: float
    min_kappa: float

    @property
    def compatible(self) -> bool:
        return self.compat_residual <= self.compat_tol

    @property
    def convex(self) -> bool:
        return self.min_kappa > 0.0

    @property
    def admissible(self) -> bool:
        return self.compatible and self.convex


@dataclass
class FlowResult:
    status: str  # "converged" | "timeout"
    state: FlowState
    records: list
    monotone: bool
    speed_within_bounds: bool
    initial_report: InitialReport
    n_steps: int
    wall_time: float
    scheme: str = "euler"
    integral_gap: float | None = None
    window: list | None = None
    recorded: dict | None = None

    @property
    def converged(self) -> bool:
        return self.status == "converged"


@dataclass
class _Eval:
    """Per-node field arrays produced by one fused kernel pass."""

    s: np.ndarray
    w: np.ndarray
    k1: np.ndarray
    k2: np.ndarray
    ux: np.ndarray
    uy: np.ndarray
    a11: np.ndarray
    a12: np.ndarray
    a22: np.ndarray

    @property
    def residual(self) -> float:
        return float(np.max(np.abs(self.s) / self.w))

    @property
    def min_kappa(self) -> float:
        return float(self.k1.min())


def _thread_count() -> int:
    raw = os.environ.get("CURVEFLOW_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


class FlowEngine:
    """Grid, forcing tables and fused evaluation bound to one configuration."""

    def __init__(self, config: FlowConfig):
        self.config = config
        if config.f.n != 2:
            raise ConfigError("the grid flow engine requires a curvature function with n = 2")
        if config.forcing.Phi_affine is None or config.forcing.phi_affine is None:
            raise ConfigError("the flow engine requires z-affine forcing presets")
        self.grid = Grid(config.domain, config.n_rho, config.n_theta)
        g = self.grid

        phi_spatial, self.phi_b = config.forcing.Phi_affine
        self.phi_a = np.ascontiguousarray(phi_spatial(g.x[:-1], g.y[:-1]))
        flux_spatial, self.flux_b = config.forcing.phi_affine
        bx = g.boundary_xy
        self.flux_a = np.ascontiguousarray(flux_spatial(bx[:, 0], bx[:, 1]))

        self.fam_id, self.fam_p, self.fam_scale = _kernels.family_code(config.f)
        self.h_loc = self._local_spacing()
        self.compat_tol = (config.compat_tol if config.compat_tol is not None
                           else 50.0 * g.h_rho ** 2)
        self._threads = _thread_count()
        if self._threads > 1:
            import numba
            numba.set_num_threads(min(self._threads, numba.config.NUMBA_NUM_THREADS))

        self._resolve_barrier()
        self.a_freeze = None  # interior-ratio denominator offset, frozen at t = 0
        self.u_nunu_running_max = 0.0
        self._pole_dt = None
        self._pole_coef = np.zeros(0)

    # -- static tables -----------------------------------------------------------

    def _local_spacing(self) -> np.ndarray:
        g = self.grid
        a, b = g.domain.a, g.domain.b
        T = np.meshgrid(g.rho[:-1], g.theta, indexing="ij")[1]
        r_fac = np.sqrt((a * np.cos(T)) ** 2 + (b * np.sin(T)) ** 2)
        t_fac = np.sqrt((a * np.sin(T)) ** 2 + (b * np.cos(T)) ** 2)
        h_rad = g.h_rho * r_fac
        rho = g.rho[:-1][:, None]
        h_ang = 2.0 * np.pi * rho * t_fac / g.n_theta
        h_loc = np.minimum(h_rad, h_ang)
        # pole rings advance their azimuthal diffusion by an exact
        # integrating factor, so only the radial spacing limits them
        h_loc[: g.pole_rows] = h_rad[: g.pole_rows]
        return h_loc

    def _resolve_barrier(self) -> None:
        params = self.config.barrier
        g = self.grid
        if params is None:
            self.barrier_enabled = False
            return
        reach = g.domain.reach
        mu = params.mu if params.mu is not None else 0.3 * reach
        if not 0.0 < mu < reach:
            raise ConfigError(f"barrier collar width mu={mu} must lie in (0, {reach:.6g})")
        quad = params.quad_coef if params.quad_coef is not None else 1.0 / (8.0 * mu)
        self.barrier_enabled = True
        self.barrier_mu = mu
        self.barrier_quad = quad
        self.barrier_a = params.a_bar
        d = g.dist[:-1]
        self.barrier_mask = d < mu
        self.barrier_q = -d + quad * d * d
        qprime = -1.0 + 2.0 * quad * d
        self.barrier_dq = qprime * g.dist_grad[:, :-1]
        flux_spatial, _ = self.config.forcing.phi_affine
        self.barrier_flux_a = flux_spatial(g.x[:-1], g.y[:-1])

    # -- field plumbing ------------------------------------------------------------

    def initial_field(self) -> ScalarField:
        cfg = self.config
        if cfg.u0 is None:
            raise ConfigError("no initial data: set FlowConfig.u0 or use a preset builder")
        if isinstance(cfg.u0, ScalarField):
            if cfg.u0.values.shape != self.grid.shape:
                raise ConfigError(
                    f"initial field shape {cfg.u0.values.shape} does not match "
                    f"the configured grid {self.grid.shape}")
            fld = ScalarField(values=cfg.u0.values.copy(), t=0.0)
        else:
            fld = self.grid.field(cfg.u0, t=0.0)
        self.solve_ghost(fld.values)
        return fld

    def solve_ghost(self, values: np.ndarray) -> None:
        """Engine-convention Neumann closure (centered angular differences)."""
        g = self.grid
        _kernels.ghost_row(values, self.flux_a, self.flux_b, g.bc_rho,
                           g.bc_theta, g.h_rho, g.h_theta)

    def _refresh_pole_tables(self, ev: _Eval, dt: float) -> None:
        """Per-mode integrating factors for the pole-ring azimuthal diffusion.

        On the treated rings the azimuthal part of the operator is advanced
        by exponential time differencing with a frozen per-ring coefficient
        bound: unconditionally stable there, and with a fixed point that
        still solves the unmodified discrete stationary equation.
        """
        g = self.grid
        rows = g.pole_rows
        if rows == 0:
            self._pole_dt = dt
            return
        lam = self._g_spectral_radius(ev)
        coef = 1.3 * np.max(ev.w[:rows] * lam[:rows] * g.pole_grad_theta_sq, axis=1)
        self._pole_coef = coef
        z = dt * coef[:, None] * g.theta_fd_symbol[None, :]
        self._pole_decay = np.exp(-z)
        small = z < 1e-12
        with np.errstate(divide="ignore", invalid="ignore"):
            phi1 = (1.0 - self._pole_decay) / z
        self._pole_phi1 = np.where(small, 1.0, phi1)
        self._pole_dt = dt

    def evaluate(self, values: np.ndarray) -> _Eval:
        g = self.grid
        shape = (g.n_rho, g.n_theta)
        out = _Eval(*[np.empty(shape) for _ in range(9)])
        kernel = (_kernels.eval_fields_parallel if self._threads > 1
                  else _kernels.eval_fields)
        kernel(values, g.grad_coef, g.hess_coef, self.phi_a, self.phi_b,
               self.fam_id, self.fam_p, self.fam_scale, g.h_rho, g.h_theta,
               out.s, out.w, out.k1, out.k2, out.ux, out.uy,
               out.a11, out.a12, out.a22)
        return out

    # -- spec operations -------------------------------------------------------------

    def check_initial(self, fld: ScalarField | None = None) -> InitialReport:
        """Compatibility, supersolution margin and convexity of the start data.

        The compatibility residual uses one-sided boundary stencils so it does
        not depend on the ghost ring the flux condition itself would set.
        """
        if fld is None:
            fld = self.initial_field()
        g = self.grid
        du_b, _ = g.boundary_one_sided(fld)
        nu = g.boundary_normal
        u_nu = nu[:, 0] * du_b[0] + nu[:, 1] * du_b[1]
        ub = fld.values[g.n_rho - 1]
        compat = float(np.max(np.abs(u_nu - (self.flux_a + self.flux_b * ub))))

        ev = self.evaluate(fld.values)
        margin = float(np.min(ev.s / ev.w))
        return InitialReport(compat_residual=compat, compat_tol=self.compat_tol,
                             supersolution_margin=margin, min_kappa=ev.min_kappa)

    def _refuse_if_inadmissible(self, fld: ScalarField, report: InitialReport) -> None:
        # Compatibility first: it is ghost-independent, while an incompatible
        # boundary row corrupts the ghost ring and with it the curvature there.
        if not report.compatible:
            raise IncompatibleInitialDataError(
                f"initial data violates the flux condition: boundary residual "
                f"{report.compat_residual:.3e} exceeds tolerance {report.compat_tol:.3e}")
        if not report.convex:
            ev = self.evaluate(fld.values)
            node = np.unravel_index(int(np.argmin(ev.k1)), ev.k1.shape)
            raise FlowBreakdownError(
                f"initial surface is not strictly convex: min kappa "
                f"{report.min_kappa:.3e} at ring {node[0]}, column {node[1]}",
                node=node,
                xy=(float(self.grid.x[node]), float(self.grid.y[node])),
                spectrum=(float(ev.k1[node]), float(ev.k2[node])),
                t=0.0,
            )

    def stable_dt(self, ev: _Eval) -> float:
        """Parabolic step bound sigma min h_loc^2 / (2 n w lambda_max)."""
        lam_g = self._g_spectral_radius(ev)
        n = 2
        bound = self.h_loc ** 2 / (2.0 * n * ev.w * lam_g)
        return self.config.sigma * float(bound.min())

    def _g_spectral_radius(self, ev: _Eval) -> np.ndarray:
        """Largest eigenvalue of the Hessian-derivative matrix of the operator."""
        f1, f2 = _grad_n2(ev.k1, ev.k2, self.fam_id, self.fam_p, self.fam_scale)
        # eigenvectors of A for kappa_1: (a12, k1 - a11), with a diagonal fallback
        v1x, v1y = _eigvec_n2(ev.a11, ev.a12, ev.a22, ev.k1)
        # F' = f1 v1 v1^T + f2 v2 v2^T with v2 = perp(v1)
        p11 = f1 * v1x * v1x + f2 * v1y * v1y
        p12 = (f1 - f2) * v1x * v1y
        p22 = f1 * v1y * v1y + f2 * v1x * v1x
        cc = 1.0 / (ev.w * (1.0 + ev.w))
        g11 = 1.0 - ev.ux * ev.ux * cc
        g12 = -ev.ux * ev.uy * cc
        g22 = 1.0 - ev.uy * ev.uy * cc
        # M = gamma F' gamma / w, then its largest eigenvalue
        b11 = g11 * p11 + g12 * p12
        b12 = g11 * p12 + g12 * p22
        b21 = g12 * p11 + g22 * p12
        b22 = g12 * p12 + g22 * p22
        m11 = (b11 * g11 + b12 * g12) / ev.w
        m12 = (b11 * g12 + b12 * g22) / ev.w
        m22 = (b21 * g12 + b22 * g22) / ev.w
        mean = 0.5 * (m11 + m22)
        disc = np.sqrt(np.maximum(0.25 * (m11 - m22) ** 2 + m12 * m12, 0.0))
        return mean + disc

    def step(self, state: FlowState, dt: float | None = None) -> FlowState:
        """One accepted forward-Euler step with reject-and-halve cone guarding."""
        ev = self.evaluate(state.field.values)
        self._guard_cone(ev, state.t)
        if dt is None:
            dt = self.stable_dt(ev)
        for _ in range(MAX_DT_HALVINGS + 1):
            self._ensure_pole_tables(ev, dt)
            trial = self._advance(state.field.values, ev.s, dt)
            ev_trial = self.evaluate(trial)
            if ev_trial.min_kappa > self._cone_floor(ev_trial):
                return FlowState(field=ScalarField(values=trial, t=state.t + dt),
                                 step_count=state.step_count + 1,
                                 last_monitor=state.last_monitor)
            dt *= 0.5
        self._raise_breakdown(ev_trial, state.t + dt)

    def _ensure_pole_tables(self, ev: _Eval, dt: float, force: bool = False) -> None:
        if force or dt != self._pole_dt:
            self._refresh_pole_tables(ev, dt)

    def _increment(self, values: np.ndarray, s: np.ndarray, dt: float) -> np.ndarray:
        """Field increment of one stabilized explicit step of size dt.

        Plain forward Euler everywhere except the pole-stiff rings, where
        the azimuthal diffusion advances through its integrating factor:
        u_new = E u + dt phi1(z) (s + A u) per angular mode, which collapses
        to the Euler update as z -> 0 and leaves stationary states fixed.
        Requires pole tables current for this dt.
        """
        inc = np.empty_like(values)
        inc[:-1] = dt * s
        inc[-1] = 0.0
        rows = self.grid.pole_rows
        if rows:
            nt = self.grid.n_theta
            u_hat = np.fft.rfft(values[:rows], axis=1)
            s_hat = np.fft.rfft(s[:rows], axis=1)
            az = self._pole_coef[:, None] * self.grid.theta_fd_symbol[None, :]
            forced = s_hat + az * u_hat
            new_hat = self._pole_decay * u_hat + dt * self._pole_phi1 * forced
            inc[:rows] = np.fft.irfft(new_hat, n=nt, axis=1) - values[:rows]
        return inc

    def _advance(self, values: np.ndarray, s: np.ndarray, dt: float) -> np.ndarray:
        out = values + self._increment(values, s, dt)
        self.solve_ghost(out)
        return out

    def _rkl_sweep(self, values: np.ndarray, ev: _Eval, stages: int,
                   dt_super: float, dt_stage: float) -> np.ndarray | None:
        """One Legendre super-step covering dt_super of pseudo-time.

        The recursion runs on the stabilized step map rather than the raw
        right-hand side, so the pole treatment carries over unchanged; its
        fixed points coincide.  Returns None if any internal stage leaves
        the convexity cone.
        """
        s = stages
        scale = 2.0 / (s * s + s)
        boost = dt_super / dt_stage

        y_prev = values
        y_curr = self._increment(values, ev.s, dt_stage)
        y_curr *= scale * boost
        y_curr += values
        self.solve_ghost(y_curr)
        for j in range(2, s + 1):
            ev_j = self.evaluate(y_curr)
            if ev_j.min_kappa <= self._cone_floor(ev_j):
                return None
            mu = (2.0 * j - 1.0) / j
            nu = (1.0 - j) / j
            y_next = self._increment(y_curr, ev_j.s, dt_stage)
            y_next *= mu * scale * boost
            y_next += mu * y_curr
            y_next += nu * y_prev
            self.solve_ghost(y_next)
            y_prev, y_curr = y_curr, y_next
        return y_curr

    def _cone_floor(self, ev: _Eval) -> float:
        return CONE_FLOOR * max(1.0, float(ev.k2.max()))

    def _guard_cone(self, ev: _Eval, t: float) -> None:
        if ev.min_kappa <= self._cone_floor(ev):
            self._raise_breakdown(ev, t)

    def _raise_breakdown(self, ev: _Eval, t: float):
        node = np.unravel_index(int(np.argmin(ev.k1)), ev.k1.shape)
        raise FlowBreakdownError(
            f"flow breakdown at t={t:.6g}: curvature spectrum "
            f"({ev.k1[node]:.3e}, {ev.k2[node]:.3e}) left the positive cone at "
            f"ring {node[0]}, column {node[1]}",
            node=node,
            xy=(float(self.grid.x[node]), float(self.grid.y[node])),
            spectrum=(float(ev.k1[node]), float(ev.k2[node])),
            t=t,
        )

    # -- monitors ---------------------------------------------------------------------

    def monitors(self, state: FlowState, ev: _Eval | None = None,
                 dt: float = 0.0) -> MonitorRecord:
        if ev is None:
            ev = self.evaluate(state.field.values)
        g = self.grid
        jb = g.n_rho - 1
        grad_sq = ev.ux ** 2 + ev.uy ** 2
        max_grad_int = float(np.sqrt(grad_sq[:jb].max()))
        max_grad_bdy = float(np.sqrt(grad_sq[jb].max()))

        du_b, hess_b = g.boundary_one_sided(state.field)
        nu = g.boundary_normal
        tau = g.boundary_tangent
        u_nunu = (nu[:, 0] * (hess_b[0] * nu[:, 0] + hess_b[1] * nu[:, 1])
                  + nu[:, 1] * (hess_b[1] * nu[:, 0] + hess_b[2] * nu[:, 1]))
        u_taunu = (tau[:, 0] * (hess_b[0] * nu[:, 0] + hess_b[1] * nu[:, 1])
                   + tau[:, 1] * (hess_b[1] * nu[:, 0] + hess_b[2] * nu[:, 1]))
        self.u_nunu_running_max = max(self.u_nunu_running_max, float(u_nunu.max()))

        nu_vert = 1.0 / ev.w
        if self.a_freeze is None:
            self.a_freeze = 0.5 * float(nu_vert.min())
        denom = nu_vert[:jb] - self.a_freeze
        with np.errstate(divide="ignore"):
            ratio = float(np.max(np.where(denom > 0, ev.k2[:jb] / denom, np.inf)))

        barrier_min = np.nan
        if self.barrier_enabled:
            barrier_min = float(self._barrier_values(state, ev).min())

        return MonitorRecord(
            t=state.t,
            dt=dt,
            max_abs_speed=float(np.abs(ev.s).max()),
            min_speed=float(ev.s.min()),
            min_kappa=float(ev.k1.min()),
            max_kappa=float(ev.k2.max()),
            nu_vert_min=float(nu_vert.min()),
            residual=ev.residual,
            max_grad_interior=max_grad_int,
            max_grad_boundary=max_grad_bdy,
            max_u_nunu=float(u_nunu.max()),
            max_abs_u_taunu=float(np.abs(u_taunu).max()),
            interior_ratio=ratio,
            barrier_min=barrier_min,
        )

    def _barrier_values(self, state: FlowState, ev: _Eval) -> np.ndarray:
        u = state.field.values[:-1]
        flux = self.barrier_flux_a + self.flux_b * u
        q_term = (self.barrier_a + 0.5 * self.u_nunu_running_max) * self.barrier_q
        p = ev.ux * self.barrier_dq[0] + ev.uy * self.barrier_dq[1] - flux - q_term
        return p[self.barrier_mask]

    def barrier_field(self, state: FlowState):
        """Collar field P on the band nodes; returns (values, min, node)."""
        if not self.barrier_enabled:
            raise ConfigError("barrier diagnostics are not enabled in this configuration")
        ev = self.evaluate(state.field.values)
        vals = self._barrier_values(state, ev)
        full = np.full(self.barrier_mask.shape, np.nan)
        full[self.barrier_mask] = vals
        node = np.unravel_index(int(np.nanargmin(full)), full.shape)
        return full, float(np.nanmin(full)), node

    # -- jets for the evolution-identity diagnostic -------------------------------------

    def fd_jet(self, values: np.ndarray):
        """Engine-convention Cartesian jet (centered angular differences).

        Mirrors the fused kernel's stencils in vectorized numpy; used by the
        evolution-identity diagnostic so both of its sides live in the same
        discretization, and by tests as the kernel's oracle.
        """
        g = self.grid
        nr = g.n_rho
        padded = g._padded_rho(values)
        h = g.h_rho
        ur = (padded[2:nr + 2] - padded[0:nr]) / (2 * h)
        urr = (padded[2:nr + 2] - 2 * padded[1:nr + 1] + padded[0:nr]) / (h * h)
        ut_all = (np.roll(values, -1, axis=1) - np.roll(values, 1, axis=1)) / (2 * g.h_theta)
        utt_all = ((np.roll(values, -1, axis=1) - 2 * values + np.roll(values, 1, axis=1))
                   / g.h_theta ** 2)
        ut, utt = ut_all[:nr], utt_all[:nr]
        ut_pad = g._padded_rho(ut_all)
        urt = (ut_pad[2:nr + 2] - ut_pad[0:nr]) / (2 * h)

        gc = g.grad_coef[:, :nr, :]
        du = np.stack([gc[0] * ur + gc[1] * ut, gc[2] * ur + gc[3] * ut])
        ch = g.hess_coef[:, :nr, :]
        d2u = np.empty((3, nr, g.n_theta))
        for comp in range(3):
            base = comp * 5
            d2u[comp] = (ch[base] * urr + ch[base + 1] * urt + ch[base + 2] * utt
                         + ch[base + 3] * ur + ch[base + 4] * ut)
        return du, d2u

    def _scalar_grad(self, field_real: np.ndarray):
        """Cartesian gradient of a ghost-free field (one-sided at the boundary)."""
        g = self.grid
        nr = g.n_rho
        padded = g._padded_rho(field_real)  # antipodal + nr rows, no ghost
        h = g.h_rho
        ur = np.empty_like(field_real)
        ur[:nr - 1] = (padded[2:nr + 1] - padded[0:nr - 1]) / (2 * h)
        ur[nr - 1] = (3 * field_real[nr - 1] - 4 * field_real[nr - 2]
                      + field_real[nr - 3]) / (2 * h)
        ut = (np.roll(field_real, -1, axis=1) - np.roll(field_real, 1, axis=1)) / (2 * g.h_theta)
        gc = g.grad_coef[:, :nr, :]
        return np.stack([gc[0] * ur + gc[1] * ut, gc[2] * ur + gc[3] * ut])

    def verify_evolution_identities(self, window):
        """Check the metric and vertical-normal evolution laws on a state triple.

        The flow moves graph points with a tangential drift relative to fixed
        coordinates, so the centered time difference at a node is corrected by
        the transport terms of that drift before comparison; both sides then
        agree up to the time-stepping error O(dt) plus stencil consistency.
        Returns a dict with the relative sup errors.
        """
        if len(window) != 3:
            raise ValueError("need exactly three consecutive states")
        s_prev, s_mid, s_next = window
        dt_plus = s_next.t - s_mid.t
        dt_minus = s_mid.t - s_prev.t
        if dt_plus <= 0 or dt_minus <= 0:
            raise ValueError("window states must be strictly ordered in time")
        two_dt = dt_plus + dt_minus

        jets = [self.fd_jet(st.field.values) for st in window]
        evs = [self.evaluate(st.field.values) for st in window]
        du_m, d2u_m = jets[1]
        ev_m = evs[1]
        w = ev_m.w
        psi = ev_m.s / w
        dpsi = self._scalar_grad(psi)

        ux, uy = du_m
        hxx, hxy, hyy = d2u_m
        # w_i = (D2u Du)_i / w
        wx = (hxx * ux + hxy * uy) / w
        wy = (hxy * ux + hyy * uy) / w
        xi_x = -psi * ux / w
        xi_y = -psi * uy / w

        # identity for the vertical normal component 1/w
        nu_prev = 1.0 / evs[0].w
        nu_next = 1.0 / evs[2].w
        lhs_nu = (nu_next - nu_prev) / two_dt + xi_x * (-wx / w ** 2) + xi_y * (-wy / w ** 2)
        rhs_nu = -(dpsi[0] * ux + dpsi[1] * uy) / w ** 2
        gap_nu = np.abs(lhs_nu - rhs_nu) / np.max(np.abs(rhs_nu))
        # The boundary ring evolves through the flux closure rather than the
        # pointwise update, leaving an O(h^2) remainder there independent of
        # dt; it is reported separately from the interior measure.
        err_nu = float(gap_nu[:-1].max())
        err_nu_bdy = float(gap_nu[-1].max())

        # identity for the induced metric g_ij = delta_ij + u_i u_j
        du_p = jets[2][0]
        du_q = jets[0][0]
        comps = ((0, 0), (0, 1), (1, 1))
        worst = 0.0
        worst_bdy = 0.0
        scale = 0.0
        # d_i xi^a = -dpsi_i u_a / w - psi u_ai / w + psi u_a w_i / w^2
        hess = {(0, 0): hxx, (0, 1): hxy, (1, 0): hxy, (1, 1): hyy}
        grads = (ux, uy)
        wgrad = (wx, wy)
        dxi = {}
        for i in range(2):
            for a_idx in range(2):
                dxi[(i, a_idx)] = (-dpsi[i] * grads[a_idx] / w
                                   - psi * hess[(a_idx, i)] / w
                                   + psi * grads[a_idx] * wgrad[i] / w ** 2)
        gmat = {(0, 0): 1.0 + ux * ux, (0, 1): ux * uy,
                (1, 0): ux * uy, (1, 1): 1.0 + uy * uy}
        lhs_parts = {}
        rhs_parts = {}
        for (i, j) in comps:
            g_next = (1.0 if i == j else 0.0) + du_p[i] * du_p[j]
            g_prev = (1.0 if i == j else 0.0) + du_q[i] * du_q[j]
            dtg = (g_next - g_prev) / two_dt
            adv = (xi_x * (hess[(i, 0)] * grads[j] + grads[i] * hess[(j, 0)])
                   + xi_y * (hess[(i, 1)] * grads[j] + grads[i] * hess[(j, 1)]))
            basis = sum(dxi[(i, a)] * gmat[(a, j)] + gmat[(i, a)] * dxi[(j, a)]
                        for a in range(2))
            lhs_parts[(i, j)] = dtg + adv + basis
            rhs_parts[(i, j)] = -2.0 * psi * hess[(i, j)] / w
            scale = max(scale, float(np.max(np.abs(rhs_parts[(i, j)]))))
        for key in comps:
            gap = np.abs(lhs_parts[key] - rhs_parts[key])
            worst = max(worst, float(gap[:-1].max()))
            worst_bdy = max(worst_bdy, float(gap[-1].max()))

        return {"metric_rel_err": worst / scale,
                "nu_vert_rel_err": err_nu,
                "metric_rel_err_boundary": worst_bdy / scale,
                "nu_vert_rel_err_boundary": err_nu_bdy,
                "metric_abs_err": worst,
                "metric_rhs_scale": scale,
                "nu_vert_abs_err": float(np.max(np.abs(lhs_nu - rhs_nu))),
                "nu_vert_rhs_scale": float(np.max(np.abs(rhs_nu))),
                "dt": 0.5 * two_dt, "t": s_mid.t}

    # -- drivers -----------------------------------------------------------------------

    def run(self, capture_window_at: float | None = None,
            record_times=(), track_integral: bool = False,
            skip_initial_checks: bool = False,
            accel_stages: int | None = None) -> FlowResult:
        """Integrate until the residual stays under tol_res or time runs out.

        ``record_times`` collects snapshots at exact flow times (the step is
        clipped to land on them); ``capture_window_at`` stores three
        consecutive states for the evolution-identity diagnostic.

        ``accel_stages`` switches the time march from single Euler steps to
        Legendre super-steps of that many stages: still explicit and first
        order in time, but covering (stages^2+stages)/2 Euler steps per
        sweep.  Intended for convergence studies at fine resolutions where
        plain Euler would need millions of steps; the strict per-step
        maximum-principle guarantees are only sampled at sweep granularity
        in that mode.
        """
        cfg = self.config
        if accel_stages is not None and capture_window_at is not None:
            raise ConfigError("identity windows need plain Euler stepping")
        if accel_stages is not None and track_integral:
            raise ConfigError("the exact step-sum identity only holds for Euler stepping")
        start = time.perf_counter()
        fld = self.initial_field()
        report = self.check_initial(fld)
        if not skip_initial_checks:
            self._refuse_if_inadmissible(fld, report)

        ev = self.evaluate(fld.values)
        self._guard_cone(ev, 0.0)
        state = FlowState(field=fld)
        records = []
        captured = None
        recorded = {}
        pending = sorted(record_times)

        speed_hi0 = max(float(ev.s.max()), 0.0)
        speed_lo0 = min(float(ev.s.min()), 0.0)
        speed_ok = True
        monotone = True
        integral = np.zeros_like(ev.s) if track_integral else None
        u_start = fld.values[:-1].copy() if track_integral else None

        dt = self.stable_dt(ev)
        consecutive_converged = 0
        status = "timeout"
        step_idx = 0
        window_buf = []

        while True:
            smax, smin = float(ev.s.max()), float(ev.s.min())
            if smax > speed_hi0 + SPEED_BOUND_SLACK or smin < speed_lo0 - SPEED_BOUND_SLACK:
                speed_ok = False

            if (step_idx % cfg.monitor_cadence == 0) or step_idx == 1:
                rec = self.monitors(state, ev, dt)
                records.append(rec)
                state.last_monitor = rec
                if rec.residual < cfg.tol_res:
                    consecutive_converged += 1
                    if consecutive_converged >= 2:
                        status = "converged"
                        break
                else:
                    consecutive_converged = 0

            if state.t >= cfg.t_max:
                status = "timeout"
                break

            if step_idx % DT_REFRESH_STEPS == 0 and not window_buf:
                fresh = self.stable_dt(ev)
                if step_idx == 0 or abs(fresh - dt) > 0.02 * dt:
                    dt = fresh
                    self._ensure_pole_tables(ev, dt, force=True)

            if capture_window_at is not None and captured is None and state.t >= capture_window_at:
                window_buf.append(FlowState(field=ScalarField(state.field.values.copy(), state.t),
                                            step_count=step_idx))
                if len(window_buf) == 3:
                    captured = window_buf
                    window_buf = []

            if accel_stages is None:
                local_dt = dt
            else:
                local_dt = 0.8 * dt * (accel_stages * accel_stages + accel_stages) / 2.0
            if pending:
                gap = pending[0] - state.t
                if gap <= 1e-14:
                    recorded[pending.pop(0)] = FlowState(
                        field=ScalarField(state.field.values.copy(), state.t),
                        step_count=step_idx)
                    gap = pending[0] - state.t if pending else np.inf
                if gap < local_dt:
                    local_dt = gap

            accepted = False
            for _ in range(MAX_DT_HALVINGS + 1):
                if accel_stages is None:
                    self._ensure_pole_tables(ev, local_dt)
                    trial = self._advance(state.field.values, ev.s, local_dt)
                else:
                    self._ensure_pole_tables(ev, dt)
                    trial = self._rkl_sweep(state.field.values, ev, accel_stages,
                                            local_dt, dt)
                if trial is not None:
                    ev_trial = self.evaluate(trial)
                    if ev_trial.min_kappa > self._cone_floor(ev_trial):
                        accepted = True
                        break
                local_dt *= 0.5
            if not accepted:
                self._raise_breakdown(ev_trial if trial is not None else ev,
                                      state.t + local_dt)

            if accel_stages is None:
                if smin * local_dt < MONOTONE_SLACK:
                    monotone = False
            else:
                inc_min = float((trial[:-1] - state.field.values[:-1]).min())
                if inc_min < MONOTONE_SLACK:
                    monotone = False
            if track_integral:
                integral += local_dt * ev.s

            state = FlowState(field=ScalarField(values=trial, t=state.t + local_dt),
                              step_count=step_idx + 1,
                              last_monitor=state.last_monitor)
            ev = ev_trial
            step_idx += 1

        if not records or records[-1].t != state.t:
            rec = self.monitors(state, ev, dt)
            records.append(rec)
            state.last_monitor = rec

        integral_gap = None
        if track_integral:
            integral_gap = float(np.max(np.abs((state.field.values[:-1] - u_start) - integral)))

        return FlowResult(status=status, state=state, records=records,
                          monotone=monotone, speed_within_bounds=speed_ok,
                          initial_report=report, n_steps=step_idx,
                          wall_time=time.perf_counter() - start,
                          integral_gap=integral_gap,
                          window=captured, recorded=recorded)

    def solve_stationary(self, residual_target: float | None = None,
                         start: ScalarField | None = None, stages: int = 24,
                         max_sweeps: int = 200000):
        """Pseudo-time relaxation to the stationary problem F(A[u]) = Phi.

        Reuses the Euler stage inside Legendre super-steps, which cover a
        pseudo-time interval of (stages^2 + stages)/2 Euler steps per sweep
        while remaining explicit.  Accepts an optional warm start (a field
        on this engine's grid), e.g. a prolonged coarse solution.
        """
        cfg = self.config
        target = residual_target if residual_target is not None else 0.01 * cfg.tol_res
        fld = (ScalarField(values=start.values.copy(), t=0.0) if start is not None
               else self.initial_field())
        self.solve_ghost(fld.values)
        u = fld.values
        ev = self.evaluate(u)
        self._guard_cone(ev, 0.0)
        res0 = ev.residual
        s = stages
        sweeps = 0
        evals = 1
        clean = 0
        best = np.inf
        since_best = 0
        dt_stage = None
        while ev.residual > target and sweeps < max_sweeps:
            # the mixed-sign three-term combinations bottom out a couple of
            # orders above machine precision; hand over to Euler polishing
            if ev.residual < best * 0.995:
                best = ev.residual
                since_best = 0
            else:
                since_best += 1
                if since_best > 200:
                    break
            # dt (and with it the pole tables) changes only on real drift:
            # rebuilding the integrating factors every sweep re-excites the
            # stiff azimuthal modes and stalls the tail of the convergence
            if sweeps % 5 == 0 or dt_stage is None:
                fresh = self.stable_dt(ev)
                if dt_stage is None or abs(fresh - dt_stage) > 0.02 * dt_stage:
                    dt_stage = fresh
                    self._ensure_pole_tables(ev, dt_stage, force=True)
            dt_super = 0.8 * dt_stage * (s * s + s) / 2.0
            trial = self._rkl_sweep(u, ev, s, dt_super, dt_stage)
            evals += s
            if trial is not None:
                ev_new = self.evaluate(trial)
                if ev_new.min_kappa <= self._cone_floor(ev_new):
                    trial = None
            if trial is None:
                if s <= 3:
                    self._raise_breakdown(ev, 0.0)
                s = max(3, s // 2)
                clean = 0
                dt_stage = None
                continue
            u = trial
            ev = ev_new
            sweeps += 1
            clean += 1
            if clean >= 5 and s < stages:
                s = min(stages, s * 2)
                clean = 0
            if ev.residual > 100.0 * max(res0, 1.0):
                raise FlowBreakdownError("stationary relaxation diverged")

        polish = 0
        dt = None
        while ev.residual > target and polish < max_sweeps:
            if dt is None or polish % 100 == 0:
                dt = self.stable_dt(ev)
                self._ensure_pole_tables(ev, dt, force=True)
            trial = self._advance(u, ev.s, dt)
            ev_new = self.evaluate(trial)
            evals += 1
            polish += 1
            if ev_new.min_kappa <= self._cone_floor(ev_new):
                self._raise_breakdown(ev_new, 0.0)
            if ev_new.residual >= ev.residual and ev.residual < 1e3 * target:
                u, ev = trial, ev_new
                break  # roundoff floor reached
            u, ev = trial, ev_new
        if ev.residual > target:
            raise FlowBreakdownError(
                f"stationary relaxation stalled at residual {ev.residual:.3e} "
                f"(target {target:.3e})")
        info = {"residual": ev.residual, "sweeps": sweeps, "stage_evals": evals,
                "polish_steps": polish}
        return ScalarField(values=u.copy(), t=np.inf), info


def _grad_n2(k1, k2, fam_id, fam_p, fam_scale):
    """Vectorized speed-function gradient for n = 2 (matches the kernel families)."""
    if fam_id == _kernels.FAM_KTH_ROOT:
        if fam_p == 1:
            f1 = np.full_like(k1, 0.5)
            f2 = np.full_like(k1, 0.5)
        else:
            root = np.sqrt(k1 * k2)
            f1, f2 = 0.5 * root / k1, 0.5 * root / k2
        return fam_scale * f1, fam_scale * f2
    ssum = k1 + k2
    q1 = 2.0 * k2 ** 2 / ssum ** 2
    q2 = 2.0 * k1 ** 2 / ssum ** 2
    root = np.sqrt(k1 * k2)
    g1, g2 = 0.5 * root / k1, 0.5 * root / k2
    if fam_id == _kernels.FAM_QUOTIENT:
        if fam_p == 0:
            return fam_scale * g1, fam_scale * g2
        return fam_scale * q1, fam_scale * q2
    if fam_p == 0:
        return fam_scale * g1, fam_scale * g2
    return fam_scale * 0.5 * (g1 + q1), fam_scale * 0.5 * (g2 + q2)


def _eigvec_n2(a11, a12, a22, k1):
    """Unit eigenvector for the smaller eigenvalue of a symmetric 2x2 stack."""
    vx = np.where(np.abs(a12) > 1e-300, a12, 1.0)
    vy = np.where(np.abs(a12) > 1e-300, k1 - a11, 0.0)
    swap = (np.abs(a12) <= 1e-300) & (a11 > a22)
    vx = np.where(swap, 0.0, vx)
    vy = np.where(swap, 1.0, vy)
    norm = np.hypot(vx, vy)
    return vx / norm, vy / norm


# ---------------------------------------------------------------------------
# Presets and functional wrappers
# ---------------------------------------------------------------------------


def sphere_cap_preset(n_rho: int, n_theta: int, boundary_radius: float = 1.0,
                      sphere_radius: float = 2.0, delta: float = 0.15,
                      l_index: int = 1, **overrides) -> FlowConfig:
    """Disk flow whose exact stationary limit is a lower sphere cap.

    The initial surface sits delta below the cap with a profile whose
    boundary slope matches the flux condition exactly, keeping it strictly
    convex with a nonnegative stationary margin for moderate delta.
    """
    from .geometry import sphere_cap_forcing

    R = boundary_radius
    rho_s = sphere_radius
    if delta < 0:
        raise ConfigError("preset offset delta must be nonnegative")

    def u0(x, y):
        r2 = x ** 2 + y ** 2
        cap = -np.sqrt(rho_s ** 2 - r2)
        bump = 0.25 + 1.0 / (2.0 * R) - r2 / (4.0 * R ** 2)
        return cap - delta * bump

    defaults = dict(sigma=0.9, tol_res=1e-6, t_max=60.0, monitor_cadence=50,
                    barrier=BarrierParams(), label="sphere-cap")
    defaults.update(overrides)
    return FlowConfig(
        domain=Domain(a=R, b=R),
        n_rho=n_rho,
        n_theta=n_theta,
        f=CurvatureFunction.combined(2, l_index),
        forcing=sphere_cap_forcing(R, rho_s),
        u0=u0,
        **defaults,
    )


def sphere_cap_exact(grid: Grid, sphere_radius: float = 2.0) -> np.ndarray:
    """Analytic stationary cap sampled on the grid's real rings."""
    r2 = grid.x[:-1] ** 2 + grid.y[:-1] ** 2
    return -np.sqrt(sphere_radius ** 2 - r2)


def prolong_field(coarse: Grid, fld: ScalarField, fine: Grid) -> ScalarField:
    """Transfer a field between polar grids of the same domain.

    Spectral in the angle (Fourier zero padding), natural cubic spline in
    the radius with the spline closed through the pole along the antipodal
    column.  Smooth enough that a strictly convex coarse solution stays in
    the cone, making it a valid warm start for nested stationary solves;
    the spline end conditions do leave an O(1) second-derivative kink at
    the outermost interval, which the first relaxation sweeps remove.
    """
    from .domain_grid import cubic_spline_eval, cubic_spline_second_derivs

    if (coarse.domain.a, coarse.domain.b) != (fine.domain.a, fine.domain.b):
        raise ConfigError("grids must share the same domain")
    vals = fld.values[:coarse.n_rho]
    ntf = fine.n_theta
    spec = np.fft.rfft(vals, axis=1)
    if ntf != coarse.n_theta:
        pad = np.zeros((coarse.n_rho, ntf // 2 + 1), dtype=complex)
        pad[:, : spec.shape[1]] = spec
        refined = np.fft.irfft(pad, n=ntf, axis=1) * (ntf / coarse.n_theta)
    else:
        refined = vals.copy()
    half = ntf // 2
    anti = np.roll(refined[:2], half, axis=1)
    knots = np.concatenate([-coarse.rho[1::-1], coarse.rho[: coarse.n_rho]])
    column_data = np.concatenate([anti[::-1], refined], axis=0)
    second = cubic_spline_second_derivs(knots, column_data)
    rho_f = np.clip(fine.rho[: fine.n_rho], knots[0], knots[-1])
    out = cubic_spline_eval(knots, column_data, second, rho_f)
    return fine.field(out)


def check_initial(config: FlowConfig) -> InitialReport:
    return FlowEngine(config).check_initial()


def run_flow(config: FlowConfig, **kwargs) -> FlowResult:
    return FlowEngine(config).run(**kwargs)


def solve_stationary(config: FlowConfig, **kwargs):
    return FlowEngine(config).solve_stationary(**kwargs)
