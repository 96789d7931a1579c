"""Per-point geometry of convex graphs.

Everything a single grid point needs: the area element w, the square root of
the induced metric and its inverse, the curvature matrix whose eigenvalues
are the principal curvatures, the speed function F applied to it, and the
derivative matrices that drive both the time-step bound and the boundary
diagnostics.

These are reference implementations in plain numpy, valid in any dimension
up to 8; the flow engine carries a fused 2-D fast path that is tested
against this module.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .symfunc import CurvatureFunction

_JACOBI_MAX_SWEEPS = 64


def graph_quantities(du):
    """Area element and metric square-root pair for a gradient vector.

    Returns (w, gamma, gamma_inv) with w = sqrt(1 + |Du|^2),
    gamma = I - Du Du^T / (w (1 + w)) and gamma_inv = I + Du Du^T / (1 + w).
    gamma_inv @ gamma_inv reproduces the induced metric I + Du Du^T.
    """
    du = np.asarray(du, dtype=float)
    n = du.shape[0]
    w = float(np.sqrt(1.0 + du @ du))
    outer = np.outer(du, du)
    gamma = np.eye(n) - outer / (w * (1.0 + w))
    gamma_inv = np.eye(n) + outer / (1.0 + w)
    return w, gamma, gamma_inv


def curvature_matrix(du, d2u):
    """Symmetric matrix A = gamma D2u gamma / w; its spectrum is kappa."""
    d2u = np.asarray(d2u, dtype=float)
    w, gamma, _ = graph_quantities(du)
    a = gamma @ d2u @ gamma / w
    return 0.5 * (a + a.T)


def _eigh_2x2(a):
    a11, a12, a22 = a[0, 0], a[0, 1], a[1, 1]
    half_tr = 0.5 * (a11 + a22)
    disc = np.hypot(0.5 * (a11 - a22), a12)
    lam = np.array([half_tr - disc, half_tr + disc])
    # two candidate eigenvectors for the smaller eigenvalue; keep the better
    # conditioned one, falling back to the coordinate basis when A ~ scalar
    cand_a = np.array([a12, lam[0] - a11])
    cand_b = np.array([lam[0] - a22, a12])
    v0 = cand_a if cand_a @ cand_a >= cand_b @ cand_b else cand_b
    norm = np.linalg.norm(v0)
    if norm <= 1e-150 * max(1.0, abs(half_tr)):
        if a11 <= a22:
            return np.array([a11, a22]), np.eye(2)
        return np.array([a22, a11]), np.eye(2)[:, ::-1].copy()
    v0 = v0 / norm
    return lam, np.column_stack([v0, [-v0[1], v0[0]]])


def jacobi_eigh(a, tol=1e-14):
    """Cyclic Jacobi eigendecomposition for small symmetric matrices.

    Returns eigenvalues ascending and the matching orthonormal eigenvectors
    as columns.  Ties keep their pre-sort column order.
    """
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    if n == 1:
        return a[0, :1].copy(), np.ones((1, 1))
    if n == 2:
        return _eigh_2x2(a)
    m = a.copy()
    v = np.eye(n)
    scale = np.max(np.abs(m)) or 1.0
    for _ in range(_JACOBI_MAX_SWEEPS):
        off = np.sqrt(sum(m[p, q] ** 2 for p in range(n) for q in range(p + 1, n)))
        if off <= tol * scale:
            break
        for p in range(n):
            for q in range(p + 1, n):
                if abs(m[p, q]) <= 1e-300:
                    continue
                theta = 0.5 * (m[q, q] - m[p, p]) / m[p, q]
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rows = m[[p, q], :].copy()
                m[p, :] = c * rows[0] - s * rows[1]
                m[q, :] = s * rows[0] + c * rows[1]
                cols = m[:, [p, q]].copy()
                m[:, p] = c * cols[:, 0] - s * cols[:, 1]
                m[:, q] = s * cols[:, 0] + c * cols[:, 1]
                vc = v[:, [p, q]].copy()
                v[:, p] = c * vc[:, 0] - s * vc[:, 1]
                v[:, q] = s * vc[:, 0] + c * vc[:, 1]
    lam = np.diag(m).copy()
    order = np.argsort(lam, kind="stable")
    return lam[order], v[:, order]


def principal_curvatures(a):
    """Eigenvalues of A in ascending order plus the orthonormal eigenbasis."""
    return jacobi_eigh(np.asarray(a, dtype=float))


def F_and_Fij(a, f: CurvatureFunction):
    """Speed value F(A) = f(kappa) and its derivative matrix.

    The derivative matrix shares A's eigenbasis with eigenvalues f_i(kappa);
    it is positive definite whenever the spectrum stays in the cone.  Raises
    ConeViolationError (carrying the offending minimum eigenvalue) otherwise.
    """
    kappa, q = principal_curvatures(a)
    fval = float(f.value(kappa))
    fi = f.gradient(kappa)
    fij = (q * fi) @ q.T
    return fval, 0.5 * (fij + fij.T)


@dataclass(frozen=True)
class GraphPointData:
    """Full geometric state of one graph point."""

    du: np.ndarray
    d2u: np.ndarray
    w: float
    gamma: np.ndarray
    gamma_inv: np.ndarray
    a_matrix: np.ndarray
    kappa: np.ndarray
    f_value: float
    f_matrix: np.ndarray

    @property
    def nu_vert(self) -> float:
        """Vertical component of the upward unit normal, 1/w."""
        return 1.0 / self.w

    @property
    def second_fundamental(self) -> np.ndarray:
        """Coordinate second fundamental form D2u / w."""
        return self.d2u / self.w


def graph_point(du, d2u, f: CurvatureFunction) -> GraphPointData:
    du = np.asarray(du, dtype=float)
    d2u = np.asarray(d2u, dtype=float)
    w, gamma, gamma_inv = graph_quantities(du)
    a = curvature_matrix(du, d2u)
    kappa, _ = principal_curvatures(a)
    fval, fij = F_and_Fij(a, f)
    return GraphPointData(du=du, d2u=d2u, w=w, gamma=gamma, gamma_inv=gamma_inv,
                          a_matrix=a, kappa=kappa, f_value=fval, f_matrix=fij)


def speed(point: GraphPointData, forcing: "ForcingSpec", x, u: float) -> float:
    """Pointwise flow speed w (F - Phi(x, u))."""
    return point.w * (point.f_value - forcing.Phi(np.asarray(x, float), u))


def G_derivatives(du, d2u, f: CurvatureFunction):
    """Derivatives of G(D2u, Du) = F(gamma D2u gamma / w).

    Returns (Gij, Gs): Gij is the derivative in the Hessian entries,
    gamma F' gamma / w; Gs is the derivative in the gradient entries,
    assembled from the curvature matrix and checked against finite
    differences in the test suite.
    """
    du = np.asarray(du, dtype=float)
    n = du.shape[0]
    w, gamma, _ = graph_quantities(du)
    a = curvature_matrix(du, d2u)
    fval, fij = F_and_Fij(a, f)
    gij = gamma @ fij @ gamma / w

    fa = fij @ a
    gs = np.empty(n)
    for s in range(n):
        coupling = w * (fa @ du) @ gamma[s, :] + (fa @ gamma[:, s]) @ du
        gs[s] = -du[s] / (w * w) * fval - 2.0 / (w * (1.0 + w)) * coupling
    return gij, gs


# ---------------------------------------------------------------------------
# Forcing data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ForcingSpec:
    """Interior forcing Phi(x, z) and boundary flux phi(x, z).

    The flow engine requires both to be affine in z (all presets are); the
    affine split fields hold (spatial_part, z_coefficient) with the spatial
    part vectorized over coordinate arrays.  c_phi is a strict negative
    upper bound for the z-derivative of phi.
    """

    Phi: Callable
    Phi_z: Callable
    phi: Callable
    phi_z: Callable
    c_phi: float
    Phi_affine: tuple | None = None
    phi_affine: tuple | None = None
    label: str = "custom"


def constant_forcing(phi_value: float, flux_at_zero: float, flux_slope: float) -> ForcingSpec:
    """Constant Phi and z-affine boundary flux phi = flux_at_zero + flux_slope z."""
    if flux_slope >= 0:
        raise ValueError("boundary flux must be strictly decreasing in z")
    return ForcingSpec(
        Phi=lambda x, z: phi_value + 0.0 * _first_coord(x, z),
        Phi_z=lambda x, z: 0.0 * _first_coord(x, z),
        phi=lambda x, z: flux_at_zero + flux_slope * z + 0.0 * _first_coord(x, z),
        phi_z=lambda x, z: flux_slope + 0.0 * _first_coord(x, z),
        c_phi=flux_slope,
        Phi_affine=(lambda xs, ys: np.full_like(np.asarray(xs, float), phi_value), 0.0),
        phi_affine=(lambda xs, ys: np.full_like(np.asarray(xs, float), flux_at_zero), flux_slope),
        label="constant",
    )


def affine_forcing(phi_at_zero: float, phi_slope: float,
                   flux_at_zero: float, flux_slope: float) -> ForcingSpec:
    """Phi = phi_at_zero + phi_slope z (slope >= 0), phi likewise affine."""
    if phi_slope < 0:
        raise ValueError("interior forcing must be nondecreasing in z")
    if flux_slope >= 0:
        raise ValueError("boundary flux must be strictly decreasing in z")
    return ForcingSpec(
        Phi=lambda x, z: phi_at_zero + phi_slope * z + 0.0 * _first_coord(x, z),
        Phi_z=lambda x, z: phi_slope + 0.0 * _first_coord(x, z),
        phi=lambda x, z: flux_at_zero + flux_slope * z + 0.0 * _first_coord(x, z),
        phi_z=lambda x, z: flux_slope + 0.0 * _first_coord(x, z),
        c_phi=flux_slope,
        Phi_affine=(lambda xs, ys: np.full_like(np.asarray(xs, float), phi_at_zero), phi_slope),
        phi_affine=(lambda xs, ys: np.full_like(np.asarray(xs, float), flux_at_zero), flux_slope),
        label="affine",
    )


def sphere_cap_forcing(boundary_radius: float, sphere_radius: float) -> ForcingSpec:
    """Forcing whose stationary solution is the lower sphere cap.

    On the disk of radius R the graph u*(x) = -sqrt(rho^2 - |x|^2) has all
    principal curvatures 1/rho, so constant Phi = 1/rho together with
    phi(x, z) = R/sqrt(rho^2 - R^2) - (z - z*), z* = u*(R), makes u* an
    exact stationary solution with phi_z = -1.
    """
    if sphere_radius <= boundary_radius:
        raise ValueError("sphere radius must exceed the domain radius")
    slope = boundary_radius / np.sqrt(sphere_radius ** 2 - boundary_radius ** 2)
    z_star = -np.sqrt(sphere_radius ** 2 - boundary_radius ** 2)
    # phi(x, z) = slope - (z - z*), written as an affine pair
    flux_at_zero = slope + z_star
    return ForcingSpec(
        Phi=lambda x, z: 1.0 / sphere_radius + 0.0 * _first_coord(x, z),
        Phi_z=lambda x, z: 0.0 * _first_coord(x, z),
        phi=lambda x, z: flux_at_zero - z + 0.0 * _first_coord(x, z),
        phi_z=lambda x, z: -1.0 + 0.0 * _first_coord(x, z),
        c_phi=-1.0,
        Phi_affine=(lambda xs, ys: np.full_like(np.asarray(xs, float), 1.0 / sphere_radius), 0.0),
        phi_affine=(lambda xs, ys: np.full_like(np.asarray(xs, float), flux_at_zero), -1.0),
        label="sphere-cap",
    )


def _first_coord(x, z):
    # Broadcasting helper so scalar lambdas work on arrays of positions.
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        return 0.0 * arr + 0.0 * np.asarray(z, float)
    return 0.0 * arr.reshape(-1)[0] + 0.0 * np.asarray(z, float)


def validate_forcing(forcing: ForcingSpec, positions, z_bound: float, samples: int = 7):
    """Sampled check of the sign hypotheses on the box positions x [-C0, C0].

    Returns a list of human-readable violations, each naming the failed
    hypothesis and a witness point; empty when everything holds.
    """
    violations = []
    zs = np.linspace(-z_bound, z_bound, samples)
    for x in positions:
        for z in zs:
            phi_val = float(forcing.Phi(x, float(z)))
            if not phi_val > 0.0:
                violations.append(
                    f"interior forcing must be positive: Phi={phi_val:.3e} at x={x}, z={z:.3g}")
            phiz = float(forcing.Phi_z(x, float(z)))
            if phiz < 0.0:
                violations.append(
                    f"interior forcing must be nondecreasing in height: Phi_z={phiz:.3e} "
                    f"at x={x}, z={z:.3g}")
            fz = float(forcing.phi_z(x, float(z)))
            if not fz <= forcing.c_phi or not forcing.c_phi < 0.0:
                violations.append(
                    f"boundary flux slope must stay below a negative bound: "
                    f"phi_z={fz:.3e}, bound={forcing.c_phi:.3e} at x={x}, z={z:.3g}")
    return violations
