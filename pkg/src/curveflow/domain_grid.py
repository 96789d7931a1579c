"""Strictly convex domains and the boundary-fitted polar grid.

The domain is a disk or an origin-centered ellipse.  The grid maps
x(rho, theta) = rho (a cos theta, b sin theta) with rho in (0, 1]; radial
rings sit at rho_j = (j + 1/2) h so no node lands on the coordinate pole,
the outermost ring lies exactly on the boundary, and one ghost ring outside
carries the Neumann condition.

Derivatives are hybrid: centered second-order stencils in rho (the ring
below ring 0 is the antipodal image of ring 0, an exact identification) and
spectral differentiation in theta.  That combination is exact on affine and
quadratic fields, which the test suite pins down.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np


class DomainError(ValueError):
    pass


def _col(arr, ndim):
    """Reshape a 1-D array so it broadcasts along trailing batch axes."""
    return arr.reshape(arr.shape + (1,) * (ndim - 1))


def cubic_spline_second_derivs(xs, ys):
    """Natural-spline second derivatives; ys may carry trailing batch axes."""
    n = xs.size
    h = np.diff(xs)
    ys = np.asarray(ys, dtype=float)
    hl = _col(h, ys.ndim)
    b = np.ones(n)
    b[1:-1] = 2.0 * (h[:-1] + h[1:])
    d = np.zeros(ys.shape)
    d[1:-1] = 6.0 * ((ys[2:] - ys[1:-1]) / hl[1:] - (ys[1:-1] - ys[:-2]) / hl[:-1])
    a = np.zeros(n)
    c = np.zeros(n)
    a[1:-1] = h[:-1]
    c[1:-1] = h[1:]
    for i in range(1, n):
        m = a[i] / b[i - 1]
        b[i] = b[i] - m * c[i - 1]
        d[i] = d[i] - m * d[i - 1]
    out = np.zeros(ys.shape)
    out[-1] = d[-1] / b[-1]
    for i in range(n - 2, -1, -1):
        out[i] = (d[i] - c[i] * out[i + 1]) / b[i]
    return out


def cubic_spline_eval(xs, ys, second, q):
    """Evaluate the natural cubic spline at query points (batched like ys)."""
    q = np.asarray(q, dtype=float)
    idx = np.clip(np.searchsorted(xs, q) - 1, 0, xs.size - 2)
    h = xs[idx + 1] - xs[idx]
    t = (q - xs[idx]) / h
    tt = _col(t, ys.ndim)
    hh = _col(h, ys.ndim)
    y0, y1 = ys[idx], ys[idx + 1]
    m0, m1 = second[idx], second[idx + 1]
    return (y0 * (1 - tt) + y1 * tt
            + hh * hh / 6.0 * ((1 - tt) ** 3 - (1 - tt)) * m0
            + hh * hh / 6.0 * (tt ** 3 - tt) * m1)


@dataclass(frozen=True)
class Domain:
    """Origin-centered disk (a == b) or ellipse with semi-axes a >= 0, b >= 0."""

    a: float
    b: float

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise DomainError("semi-axes must be positive")

    @property
    def kind(self) -> str:
        return "disk" if self.a == self.b else "ellipse"

    @property
    def is_disk(self) -> bool:
        return self.a == self.b

    def boundary_curvature_bounds(self):
        """(k0, k1): min and max curvature of the boundary curve."""
        a, b = self.a, self.b
        hi, lo = max(a, b), min(a, b)
        return lo / hi ** 2, hi / lo ** 2

    @property
    def reach(self) -> float:
        """Largest collar width with a smooth distance function."""
        k0, k1 = self.boundary_curvature_bounds()
        return 1.0 / k1

    def contains(self, x, tol=1e-12) -> bool:
        x = np.asarray(x, dtype=float)
        return (x[0] / self.a) ** 2 + (x[1] / self.b) ** 2 <= 1.0 + tol

    def boundary_point(self, t):
        return np.array([self.a * np.cos(t), self.b * np.sin(t)])

    def outward_normal(self, xb):
        xb = np.asarray(xb, dtype=float)
        nu = np.array([xb[0] / self.a ** 2, xb[1] / self.b ** 2])
        return nu / np.linalg.norm(nu)

    def boundary_curvature(self, t):
        a, b = self.a, self.b
        return a * b / (a * a * np.sin(t) ** 2 + b * b * np.cos(t) ** 2) ** 1.5

    def _foot_parameter(self, x, max_iter=30, tol=1e-12):
        """Parameter of the nearest boundary point (Newton on the foot equation)."""
        x = np.asarray(x, dtype=float)
        a, b = self.a, self.b
        t = math.atan2(a * x[1], b * x[0])
        for _ in range(max_iter):
            c, s = math.cos(t), math.sin(t)
            p = np.array([a * c, b * s])
            dp = np.array([-a * s, b * c])
            d2p = -p
            r = x - p
            g = r @ dp
            h = r @ d2p - dp @ dp
            if h == 0.0:
                break
            step = g / h
            t -= step
            if abs(step) < tol:
                break
        return t

    def distance(self, x):
        """(d, Dd, D2d) of the inside distance to the boundary.

        Dd points inward so that -Dd at the boundary equals the outward
        normal.  At the exact center of a disk the direction degenerates and
        a zero gradient is returned.
        """
        x = np.asarray(x, dtype=float)
        if not self.contains(x):
            raise DomainError(f"point {x} lies outside the domain")
        if self.is_disk:
            r = float(np.linalg.norm(x))
            d = self.a - r
            if r == 0.0:
                return d, np.zeros(2), np.zeros((2, 2))
            xhat = x / r
            dd = -xhat
            tang = np.array([-xhat[1], xhat[0]])
            d2d = -np.outer(tang, tang) / r
            return d, dd, d2d
        t = self._foot_parameter(x)
        p = self.boundary_point(t)
        gap = x - p
        d = float(np.linalg.norm(gap))
        if d < 1e-14:
            nu = self.outward_normal(p)
            kf = float(self.boundary_curvature(t))
            tang = np.array([-nu[1], nu[0]])
            return 0.0, -nu, -kf * np.outer(tang, tang)
        dd = gap / d
        kf = float(self.boundary_curvature(t))
        tang = np.array([-dd[1], dd[0]])
        d2d = -(kf / (1.0 - d * kf)) * np.outer(tang, tang)
        return d, dd, d2d


def build_domain(kind: str = "disk", radius: float = 1.0,
                 a: float | None = None, b: float | None = None) -> Domain:
    if kind == "disk":
        return Domain(a=radius, b=radius)
    if kind == "ellipse":
        if a is None or b is None:
            raise DomainError("ellipse requires both semi-axes")
        return Domain(a=a, b=b)
    raise DomainError(f"unknown domain kind {kind!r}")


@dataclass
class ScalarField:
    """Grid function including the ghost ring, stamped with its time."""

    values: np.ndarray  # shape (n_rho + 1, n_theta); last row is the ghost ring
    t: float = 0.0

    def copy(self) -> "ScalarField":
        return ScalarField(values=self.values.copy(), t=self.t)

    @property
    def real(self) -> np.ndarray:
        """All non-ghost rings (interior plus boundary)."""
        return self.values[:-1]


class Grid:
    """Boundary-fitted polar grid with one exterior ghost ring.

    Node layout: rings j = 0..n_rho-1 at rho_j = (j + 1/2) h_rho with
    h_rho = 2 / (2 n_rho - 1), so ring n_rho - 1 lies exactly on the
    boundary; ring n_rho is the ghost ring.  Columns are theta_i = i h_theta,
    periodic, and n_theta must be even so the antipodal pairing across the
    pole lands on grid columns.
    """

    def __init__(self, domain: Domain, n_rho: int, n_theta: int):
        if n_rho < 4:
            raise DomainError("need at least 4 radial rings")
        if n_theta < 8 or n_theta % 2:
            raise DomainError("n_theta must be even and at least 8")
        self.domain = domain
        self.n_rho = n_rho
        self.n_theta = n_theta
        self.h_rho = 2.0 / (2 * n_rho - 1)
        self.h_theta = 2.0 * np.pi / n_theta

        rho = (np.arange(n_rho + 1) + 0.5) * self.h_rho  # includes ghost ring
        theta = np.arange(n_theta) * self.h_theta
        self.rho = rho
        self.theta = theta
        R, T = np.meshgrid(rho, theta, indexing="ij")
        a, b = domain.a, domain.b
        self.x = R * a * np.cos(T)
        self.y = R * b * np.sin(T)

        self._build_chain_rule(R, T)
        self._build_boundary()
        self._build_distance()
        self._build_pole_plan()

    # -- construction internals ------------------------------------------------

    def _build_chain_rule(self, R, T):
        a, b = self.domain.a, self.domain.b
        c, s = np.cos(T), np.sin(T)
        # B = J^{-T}: cartesian gradient = B @ (u_rho, u_theta)
        b11 = c / a
        b12 = -s / (R * a)
        b21 = s / b
        b22 = c / (R * b)
        self.grad_coef = np.stack([b11, b12, b21, b22])

        # Hessian transfer: H_cart = B (H_map - u_x Tx - u_y Ty) B^T with
        # Tx, Ty the Hessians of the map components in (rho, theta).
        def congruence(m11, m12, m22):
            h11 = b11 * (b11 * m11 + b12 * m12) + b12 * (b11 * m12 + b12 * m22)
            h12 = b21 * (b11 * m11 + b12 * m12) + b22 * (b11 * m12 + b12 * m22)
            h22 = b21 * (b21 * m11 + b22 * m12) + b22 * (b21 * m12 + b22 * m22)
            return h11, h12, h22

        one = np.ones_like(R)
        zero = np.zeros_like(R)
        m_rr = congruence(one, zero, zero)
        m_rt = congruence(zero, one, zero)  # carries both symmetric slots
        m_tt = congruence(zero, zero, one)
        kx = congruence(zero, -a * s, -R * a * c)
        ky = congruence(zero, b * c, -R * b * s)

        coef = np.empty((15,) + R.shape)
        for comp in range(3):
            coef[comp * 5 + 0] = m_rr[comp]
            coef[comp * 5 + 1] = m_rt[comp]
            coef[comp * 5 + 2] = m_tt[comp]
            # gradient-correction coefficients, linear in (u_rho, u_theta)
            coef[comp * 5 + 3] = -(b11 * kx[comp] + b21 * ky[comp])
            coef[comp * 5 + 4] = -(b12 * kx[comp] + b22 * ky[comp])
        self.hess_coef = coef

    def _build_boundary(self):
        jb = self.n_rho - 1
        xb = np.stack([self.x[jb], self.y[jb]], axis=-1)
        self.boundary_xy = xb
        nu = np.stack([xb[:, 0] / self.domain.a ** 2, xb[:, 1] / self.domain.b ** 2], axis=-1)
        nu /= np.linalg.norm(nu, axis=-1, keepdims=True)
        self.boundary_normal = nu
        self.boundary_tangent = np.stack([-nu[:, 1], nu[:, 0]], axis=-1)
        g = self.grad_coef[:, jb, :]
        # normal derivative weights for (u_rho, u_theta) at the boundary
        self.bc_rho = np.ascontiguousarray(nu[:, 0] * g[0] + nu[:, 1] * g[2])
        self.bc_theta = np.ascontiguousarray(nu[:, 0] * g[1] + nu[:, 1] * g[3])
        if np.any(self.bc_rho <= 0):
            raise DomainError("outward map direction degenerate on the boundary")

    def _build_distance(self):
        shape = self.x.shape
        d = np.empty(shape)
        dd = np.empty((2,) + shape)
        if self.domain.is_disk:
            r = np.hypot(self.x, self.y)
            d[:] = self.domain.a - r
            with np.errstate(invalid="ignore", divide="ignore"):
                dd[0] = -self.x / r
                dd[1] = -self.y / r
        else:
            for j in range(self.n_rho):
                for i in range(shape[1]):
                    dist, grad, _ = self.domain.distance(
                        np.array([self.x[j, i], self.y[j, i]]))
                    d[j, i] = dist
                    dd[:, j, i] = grad
        # ghost ring lies outside; its distance data is never used
        d[self.n_rho:] = 0.0
        dd[:, self.n_rho:] = 0.0
        self.dist = d
        self.dist_grad = dd

    def _build_pole_plan(self):
        """Rings whose azimuthal stiffness exceeds the radial step bound.

        Near the coordinate pole the physical azimuthal spacing shrinks like
        rho, so explicit stepping at the radial-spacing limit is unstable
        there for high Fourier modes.  The flow engine integrates the
        azimuthal diffusion on these rings with an exact per-mode
        integrating factor instead; this plan records which rings need it
        and the geometric factors involved.
        """
        a, b = self.domain.a, self.domain.b
        aspect = min(a, b) / max(a, b)
        nyq = self.n_theta // 2
        # ring j is pole-stiff once the Nyquist wavelength falls under 2.5
        # radial spacings; beyond that the angular contribution to the
        # explicit stability sum stays a small fraction of the radial one
        stiff = self.rho[:-1] * aspect * np.pi / nyq < 2.5 * self.h_rho
        self.pole_rows = int(np.max(np.nonzero(stiff)[0])) + 1 if stiff.any() else 0
        self.pole_rows = min(self.pole_rows, self.n_rho - 2)
        # squared gradient of the angular coordinate, |grad theta|^2, on the
        # treated rings: the azimuthal diffusion coefficient is bounded by
        # (w lambda_max) |grad theta|^2
        if self.pole_rows > 0:
            Rr, T = np.meshgrid(self.rho[: self.pole_rows], self.theta, indexing="ij")
            self.pole_grad_theta_sq = ((np.sin(T) / (Rr * a)) ** 2
                                       + (np.cos(T) / (Rr * b)) ** 2)
        else:
            self.pole_grad_theta_sq = np.zeros((0, self.n_theta))
        # centered-difference symbol of -d^2/dtheta^2 for each retained mode
        m = np.arange(nyq + 1)
        self.theta_fd_symbol = (2.0 / self.h_theta * np.sin(0.5 * m * self.h_theta)) ** 2

    # -- node bookkeeping --------------------------------------------------------

    @property
    def shape(self):
        """Rows x columns of a field incl. the ghost ring."""
        return (self.n_rho + 1, self.n_theta)

    @property
    def n_nodes(self) -> int:
        return self.n_rho * self.n_theta

    def classify(self) -> np.ndarray:
        """Ring-wise node classification: 0 interior, 1 boundary, 2 ghost."""
        kinds = np.zeros(self.shape, dtype=int)
        kinds[self.n_rho - 1] = 1
        kinds[self.n_rho] = 2
        return kinds

    def field(self, values=None, t: float = 0.0) -> ScalarField:
        """Wrap node values (callable, real-ring array, or full array)."""
        full = np.zeros(self.shape)
        if values is None:
            pass
        elif callable(values):
            full[:] = values(self.x, self.y)
        else:
            values = np.asarray(values, dtype=float)
            if values.shape == self.shape:
                full[:] = values
            elif values.shape == (self.n_rho, self.n_theta):
                full[:-1] = values
            else:
                raise DomainError(f"field shape {values.shape} does not fit grid {self.shape}")
        return ScalarField(values=full, t=t)

    def omega_mu_nodes(self, mu: float) -> np.ndarray:
        """Mask of real nodes within distance mu of the boundary."""
        if not 0.0 < mu < self.domain.reach:
            raise DomainError(
                f"collar width mu={mu} must lie in (0, reach={self.domain.reach:.6g})")
        return self.dist[:-1] < mu

    # -- differentiation -----------------------------------------------------------

    def _theta_modes(self):
        return np.fft.rfftfreq(self.n_theta, d=1.0 / self.n_theta)

    def theta_derivatives(self, rows: np.ndarray):
        """Spectral d/dtheta and d2/dtheta2 along axis 1."""
        spec = np.fft.rfft(rows, axis=1)
        m = self._theta_modes()
        dt = np.fft.irfft(spec * (1j * m), n=self.n_theta, axis=1)
        dtt = np.fft.irfft(spec * -(m * m), n=self.n_theta, axis=1)
        return dt, dtt

    def _padded_rho(self, values: np.ndarray) -> np.ndarray:
        """Prepend the antipodal image of ring 0 (exact pole closure)."""
        half = self.n_theta // 2
        anti = np.roll(values[0:1], half, axis=1)
        return np.concatenate([anti, values], axis=0)

    def differentiate(self, field: ScalarField):
        """Cartesian (Du, D2u) at every real node.

        Requires the ghost ring to be populated.  Returns arrays of shapes
        (2, n_rho, n_theta) and (3, n_rho, n_theta), the Hessian packed as
        (xx, xy, yy) with the mixed entry symmetrized.
        """
        u = field.values
        padded = self._padded_rho(u)  # rows: antipodal, 0..n_rho-1, ghost
        h = self.h_rho
        nr = self.n_rho
        ur = (padded[2:nr + 2] - padded[0:nr]) / (2 * h)
        urr = (padded[2:nr + 2] - 2 * padded[1:nr + 1] + padded[0:nr]) / (h * h)

        ut_all, utt_all = self.theta_derivatives(u)
        ut = ut_all[:nr]
        utt = utt_all[:nr]
        ut_pad = self._padded_rho(ut_all)
        urt = (ut_pad[2:nr + 2] - ut_pad[0:nr]) / (2 * h)

        g = self.grad_coef[:, :nr, :]
        du = np.stack([g[0] * ur + g[1] * ut, g[2] * ur + g[3] * ut])

        ch = self.hess_coef[:, :nr, :]
        d2u = np.empty((3, nr, self.n_theta))
        for comp in range(3):
            base = comp * 5
            d2u[comp] = (ch[base] * urr + ch[base + 1] * urt + ch[base + 2] * utt
                         + ch[base + 3] * ur + ch[base + 4] * ut)
        return du, d2u

    def apply_neumann(self, field: ScalarField, forcing) -> ScalarField:
        """Return a copy whose ghost ring enforces the flux condition.

        The ghost value closes the centered radial stencil so that the
        discrete outward normal derivative at each boundary node equals
        phi(x, u) there; with z-affine phi the per-node equation is solved
        in closed form.
        """
        out = field.copy()
        self._solve_ghost(out.values, forcing, spectral=True)
        return out

    def _solve_ghost(self, values: np.ndarray, forcing, spectral=True) -> None:
        jb = self.n_rho - 1
        ub = values[jb]
        if spectral:
            spec = np.fft.rfft(ub)
            ut_b = np.fft.irfft(spec * (1j * self._theta_modes()), n=self.n_theta)
        else:
            ut_b = (np.roll(ub, -1) - np.roll(ub, 1)) / (2 * self.h_theta)
        phi_val = forcing.phi(self.boundary_xy.T, ub)
        values[self.n_rho] = values[jb - 1] + (2 * self.h_rho / self.bc_rho) * (
            phi_val - self.bc_theta * ut_b)

    def normal_derivative(self, field: ScalarField) -> np.ndarray:
        """Discrete outward normal derivative on the boundary ring."""
        du, _ = self.differentiate(field)
        nu = self.boundary_normal
        jb = self.n_rho - 1
        return nu[:, 0] * du[0, jb] + nu[:, 1] * du[1, jb]

    def boundary_one_sided(self, field: ScalarField):
        """Ghost-independent boundary jet from one-sided radial stencils.

        Returns (du, hess) on the boundary ring: du shape (2, n_theta), hess
        packed (xx, xy, yy).  Second order, using three interior rings.
        """
        u = field.values
        jb = self.n_rho - 1
        h = self.h_rho
        ur = (3 * u[jb] - 4 * u[jb - 1] + u[jb - 2]) / (2 * h)
        urr = (2 * u[jb] - 5 * u[jb - 1] + 4 * u[jb - 2] - u[jb - 3]) / (h * h)
        ut_all, utt_all = self.theta_derivatives(u[jb - 3:jb + 1])
        ut, utt = ut_all[-1], utt_all[-1]
        urt = (3 * ut_all[-1] - 4 * ut_all[-2] + ut_all[-3]) / (2 * h)

        g = self.grad_coef[:, jb, :]
        du = np.stack([g[0] * ur + g[1] * ut, g[2] * ur + g[3] * ut])
        ch = self.hess_coef[:, jb, :]
        hess = np.empty((3, self.n_theta))
        for comp in range(3):
            base = comp * 5
            hess[comp] = (ch[base] * urr + ch[base + 1] * urt + ch[base + 2] * utt
                          + ch[base + 3] * ur + ch[base + 4] * ut)
        return du, hess

    # -- snapshot I/O ---------------------------------------------------------------

    def snapshot_write(self, field: ScalarField, path) -> None:
        """Plain-text snapshot: header plus one 'rho theta x y u' line per node."""
        buf = io.StringIO()
        d = self.domain
        buf.write(f"curveflow-snapshot kind={d.kind} a={float(d.a)!r} b={float(d.b)!r} "
                  f"n_rho={self.n_rho} n_theta={self.n_theta} t={float(field.t)!r}\n")
        for j in range(self.n_rho + 1):
            for i in range(self.n_theta):
                buf.write(f"{float(self.rho[j])!r} {float(self.theta[i])!r} "
                          f"{float(self.x[j, i])!r} {float(self.y[j, i])!r} "
                          f"{float(field.values[j, i])!r}\n")
        with open(path, "w") as fh:
            fh.write(buf.getvalue())

    @staticmethod
    def snapshot_read(path):
        """Load a snapshot, returning (grid, field)."""
        with open(path) as fh:
            header = fh.readline().split()
            if not header or header[0] != "curveflow-snapshot":
                raise DomainError(f"{path} is not a grid snapshot")
            meta = dict(item.split("=", 1) for item in header[1:])
            domain = Domain(a=float(meta["a"]), b=float(meta["b"]))
            grid = Grid(domain, int(meta["n_rho"]), int(meta["n_theta"]))
            values = np.empty(grid.shape)
            for j in range(grid.n_rho + 1):
                for i in range(grid.n_theta):
                    parts = fh.readline().split()
                    values[j, i] = float(parts[4])
        return grid, ScalarField(values=values, t=float(meta["t"]))
