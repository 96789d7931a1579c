"""Fused numerical kernels for the 2-D flow hot path.

One pass per node computes the mapped-grid stencils, the Cartesian jet, the
graph geometry, the principal curvatures and the flow speed.  Angular
derivatives here are centered finite differences (the reference path in
``domain_grid`` differentiates spectrally; the two agree to second order,
which the tests pin).

Ring 0 closes over the coordinate pole through the antipodal column map;
the top ring reads the ghost ring above it.  The per-node body lives in a
scalar-argument helper so it inlines into both the serial and the
thread-parallel driver.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

# family codes for the fused speed evaluation
FAM_KTH_ROOT = 0
FAM_QUOTIENT = 1
FAM_COMBINED = 2


@njit(cache=True, inline="always", fastmath=True)
def _core(uc, ur, urr, ut, utt, urt,
          g0, g1, g2, g3,
          h0, h1, h2, h3, h4, h5, h6, h7, h8, h9,
          h10, h11, h12, h13, h14,
          pa, pb, fam_id, fam_p, fam_scale):
    uxv = g0 * ur + g1 * ut
    uyv = g2 * ur + g3 * ut
    hxx = h0 * urr + h1 * urt + h2 * utt + h3 * ur + h4 * ut
    hxy = h5 * urr + h6 * urt + h7 * utt + h8 * ur + h9 * ut
    hyy = h10 * urr + h11 * urt + h12 * utt + h13 * ur + h14 * ut

    w2 = 1.0 + uxv * uxv + uyv * uyv
    wv = np.sqrt(w2)
    cc = 1.0 / (wv * (1.0 + wv))
    g11 = 1.0 - uxv * uxv * cc
    g12 = -uxv * uyv * cc
    g22 = 1.0 - uyv * uyv * cc

    b11 = g11 * hxx + g12 * hxy
    b12 = g11 * hxy + g12 * hyy
    b21 = g12 * hxx + g22 * hxy
    b22 = g12 * hxy + g22 * hyy
    a11 = (b11 * g11 + b12 * g12) / wv
    a12 = (b11 * g12 + b12 * g22) / wv
    a22 = (b21 * g12 + b22 * g22) / wv

    mean = 0.5 * (a11 + a22)
    gap = 0.5 * (a11 - a22)
    disc = np.sqrt(gap * gap + a12 * a12)
    k1v = mean - disc
    k2v = mean + disc

    if k1v <= 0.0:
        fv = 0.0  # outside the cone; the caller rejects on min kappa
    elif fam_id == FAM_KTH_ROOT:
        if fam_p == 1:
            fv = fam_scale * 0.5 * (k1v + k2v)
        else:
            fv = fam_scale * np.sqrt(k1v * k2v)
    elif fam_id == FAM_QUOTIENT:
        if fam_p == 0:
            fv = fam_scale * np.sqrt(k1v * k2v)
        else:
            fv = fam_scale * 2.0 * k1v * k2v / (k1v + k2v)
    else:
        gauss = np.sqrt(k1v * k2v)
        if fam_p == 0:
            fv = fam_scale * gauss
        else:
            fv = fam_scale * 0.5 * (gauss + 2.0 * k1v * k2v / (k1v + k2v))

    sv = wv * (fv - (pa + pb * uc))
    return sv, wv, k1v, k2v, uxv, uyv, a11, a12, a22


@njit(cache=True, inline="always", fastmath=True)
def _ring(u, gc, hc, pa, pb, fam_id, fam_p, fam_scale,
          ihr, ihr2, iht, iht2, ix, i, nt, half,
          s, w, k1, k2, ux, uy, a11o, a12o, a22o):
    for j in range(nt):
        jp = j + 1 if j + 1 < nt else 0
        jm = j - 1 if j >= 1 else nt - 1
        if i == 0:
            ja = j + half if j + half < nt else j + half - nt
            jap = jp + half if jp + half < nt else jp + half - nt
            jam = jm + half if jm + half < nt else jm + half - nt
            um_c = u[0, ja]
            um_p = u[0, jap]
            um_m = u[0, jam]
        else:
            um_c = u[i - 1, j]
            um_p = u[i - 1, jp]
            um_m = u[i - 1, jm]
        uc = u[i, j]
        up_c = u[i + 1, j]
        ur = (up_c - um_c) * ihr
        urr = (up_c - 2.0 * uc + um_c) * ihr2
        ut = (u[i, jp] - u[i, jm]) * iht
        utt = (u[i, jp] - 2.0 * uc + u[i, jm]) * iht2
        urt = (u[i + 1, jp] - u[i + 1, jm] - um_p + um_m) * ix
        (s[i, j], w[i, j], k1[i, j], k2[i, j], ux[i, j], uy[i, j],
         a11o[i, j], a12o[i, j], a22o[i, j]) = _core(
            uc, ur, urr, ut, utt, urt,
            gc[0, i, j], gc[1, i, j], gc[2, i, j], gc[3, i, j],
            hc[0, i, j], hc[1, i, j], hc[2, i, j], hc[3, i, j], hc[4, i, j],
            hc[5, i, j], hc[6, i, j], hc[7, i, j], hc[8, i, j], hc[9, i, j],
            hc[10, i, j], hc[11, i, j], hc[12, i, j], hc[13, i, j], hc[14, i, j],
            pa[i, j], pb, fam_id, fam_p, fam_scale)


@njit(cache=True, fastmath=True)
def eval_fields(u, gc, hc, pa, pb, fam_id, fam_p, fam_scale, h_rho, h_theta,
                s, w, k1, k2, ux, uy, a11o, a12o, a22o):
    n_rho = u.shape[0] - 1
    nt = u.shape[1]
    half = nt // 2
    ihr = 1.0 / (2.0 * h_rho)
    ihr2 = 1.0 / (h_rho * h_rho)
    iht = 1.0 / (2.0 * h_theta)
    iht2 = 1.0 / (h_theta * h_theta)
    ix = 1.0 / (4.0 * h_rho * h_theta)
    for i in range(n_rho):
        _ring(u, gc, hc, pa, pb, fam_id, fam_p, fam_scale,
              ihr, ihr2, iht, iht2, ix, i, nt, half,
              s, w, k1, k2, ux, uy, a11o, a12o, a22o)


@njit(cache=True, fastmath=True, parallel=True)
def eval_fields_parallel(u, gc, hc, pa, pb, fam_id, fam_p, fam_scale, h_rho, h_theta,
                         s, w, k1, k2, ux, uy, a11o, a12o, a22o):
    n_rho = u.shape[0] - 1
    nt = u.shape[1]
    half = nt // 2
    ihr = 1.0 / (2.0 * h_rho)
    ihr2 = 1.0 / (h_rho * h_rho)
    iht = 1.0 / (2.0 * h_theta)
    iht2 = 1.0 / (h_theta * h_theta)
    ix = 1.0 / (4.0 * h_rho * h_theta)
    for i in prange(n_rho):
        _ring(u, gc, hc, pa, pb, fam_id, fam_p, fam_scale,
              ihr, ihr2, iht, iht2, ix, i, nt, half,
              s, w, k1, k2, ux, uy, a11o, a12o, a22o)


@njit(cache=True)
def ghost_row(values, flux_a, flux_b, bc_rho, bc_theta, h_rho, h_theta):
    """Close the Neumann condition: ghost ring from the boundary-ring jet."""
    n_rho = values.shape[0] - 1
    nt = values.shape[1]
    jb = n_rho - 1
    iht = 1.0 / (2.0 * h_theta)
    for j in range(nt):
        jp = j + 1 if j + 1 < nt else 0
        jm = j - 1 if j >= 1 else nt - 1
        ut_b = (values[jb, jp] - values[jb, jm]) * iht
        phi_val = flux_a[j] + flux_b * values[jb, j]
        values[n_rho, j] = values[jb - 1, j] + (2.0 * h_rho / bc_rho[j]) * (
            phi_val - bc_theta[j] * ut_b)


def family_code(f) -> tuple:
    """Map a CurvatureFunction with n == 2 onto kernel dispatch codes."""
    if f.n != 2:
        raise ValueError("the grid flow engine is two-dimensional")
    if f.family == "kth-root":
        return FAM_KTH_ROOT, f.k, f.scale
    if f.family == "quotient":
        return FAM_QUOTIENT, f.l, f.scale
    return FAM_COMBINED, f.l, f.scale
