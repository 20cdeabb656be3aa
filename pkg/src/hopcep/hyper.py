"""Adaptive hyper-parameter learning: activity rate, slab variances, and the
per-axis off-grid offset quadratic programs.

The off-grid offsets of one axis x solve min_x  x' Xi_x x - 2 chi_x' x, the
quadratic form of the expectation-step objective

    (1/L) sum_l ||mu_g_l - W(omega) mu_h_l||^2 + Tr(W(omega) Sigma_h W(omega)^H)

in the axis offsets, with

    Xi_x  = R_x' Re{ (Wdot_x^H Wdot_x)* o U } R_x,
    chi_x = R_x' Re{ (1/L) (M_h* o V_x) 1 } - R_x' Re{ diag(Wdot_x^H W_nox Sigma_h) },
    U     = (1/L) M_h M_h^H + Sigma_h,
    V_x   = Wdot_x^H (M_g - W_nox M_h),
    W_nox = W(omega) - Wdot_x diag(R_x x_hat)   (the axis-x correction removed).

The fast builders exploit the exact Gram identities of the zero-offset factors
(B^H B = N I, C^H C = M I) to shrink the Hadamard sandwich onto small per-axis
blocks; only the Doppler Gram (oversampled, hence non-orthogonal) is kept.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .config import AXES, GridSpec, OffGridParams
from .dictionary import (DictionarySet, _kron_apply, _kron_apply_adjoint,
                         axis_blocks, reduce_axis, replicate_axis, sandwich_axis)

__all__ = [
    "QuadraticForm",
    "update_rho",
    "update_sigma",
    "em_offgrid_objective",
    "build_quadratic_exact",
    "build_quadratic_fast",
    "solve_offgrid_axis",
    "update_offgrid",
]


@dataclass
class QuadraticForm:
    xi: np.ndarray   # (axis_len, axis_len) real symmetric
    chi: np.ndarray  # (axis_len,)


def update_rho(zeta: np.ndarray, bounds=(1e-6, 1.0 - 1e-6)) -> float:
    """Mean posterior activity over the DAD grid, clamped into (0, 1)."""
    z = np.asarray(zeta)
    if np.any((z < 0) | (z > 1)):
        raise ValueError("zeta entries must lie in [0, 1]")
    return float(np.clip(z.mean(), bounds[0], bounds[1]))


def update_sigma(mu_h: np.ndarray, tau_h: np.ndarray) -> np.ndarray:
    """Slab second moment per grid point, averaged over the L subbands."""
    if np.any(np.asarray(tau_h) < 0):
        raise ValueError("tau_h must be nonnegative")
    m2 = np.abs(mu_h) ** 2 + tau_h
    return m2.mean(axis=1) if m2.ndim == 2 else m2


def _sigma_diag(tau_h: np.ndarray) -> np.ndarray:
    return tau_h.mean(axis=1) if tau_h.ndim == 2 else tau_h


def _omega_without(omega: OffGridParams, axis: str) -> OffGridParams:
    out = omega.copy()
    out.get(axis)[:] = 0.0
    return out


def em_offgrid_objective(x: np.ndarray, axis: str, m_g: np.ndarray,
                         m_h: np.ndarray, tau_h: np.ndarray,
                         dset: DictionarySet, omega: OffGridParams) -> float:
    """Dense evaluation of the expectation-step objective with axis ``axis``
    offsets set to ``x`` and all other axes held at ``omega``.

    Serves as the brute-force oracle for the quadratic builders: since the
    composed dictionary is linear in the offsets, the objective is exactly
    quadratic in ``x``.
    """
    mod = omega.copy()
    mod.set(axis, np.asarray(x, dtype=float))
    w = dset.compose_dense(mod)
    l_sub = m_h.shape[1]
    resid = m_g - w @ m_h
    sigma_diag = _sigma_diag(tau_h)
    col_energy = np.einsum("ij,ij->j", w.conj(), w).real
    return float(np.vdot(resid, resid).real / l_sub + col_energy @ sigma_diag)


def build_quadratic_exact(axis: str, m_g: np.ndarray, m_h: np.ndarray,
                          tau_h: np.ndarray, dset: DictionarySet,
                          omega: OffGridParams) -> QuadraticForm:
    """Xi_x and chi_x from the dense dictionary matrices."""
    grid = dset.grid
    l_sub = m_h.shape[1]
    sigma_diag = _sigma_diag(tau_h)
    w_dot = dset.w_dot_dense(axis)
    gram = dset.w_dot_gram(axis)

    u = (m_h @ m_h.conj().T) / l_sub
    u[np.diag_indices_from(u)] += sigma_diag
    xi = sandwich_axis(grid, axis, np.real(gram.conj() * u))

    w_nox = dset.compose_dense(_omega_without(omega, axis))
    v = w_dot.conj().T @ (m_g - w_nox @ m_h)
    chi1 = reduce_axis(grid, axis,
                       np.real(m_h.conj() * v).sum(axis=1) / l_sub)
    cross_diag = np.einsum("ij,ij->j", w_dot.conj(), w_nox)
    chi2 = reduce_axis(grid, axis, np.real(cross_diag * sigma_diag))
    return QuadraticForm(xi=xi, chi=chi1 - chi2)


# tensor permutations taking (nd, mv, mh, kd, L) to the per-axis layouts
_GRAM_PERM = {"alpha": (0, 3, 1, 2, 4), "beta": (1, 3, 0, 2, 4),
              "gamma": (2, 3, 0, 1, 4), "eta": (3, 0, 1, 2, 4)}
_CHI_PERM = {"alpha": (0, 1, 2, 3, 4), "beta": (1, 0, 2, 3, 4),
             "gamma": (2, 0, 1, 3, 4), "eta": (3, 0, 1, 2, 4)}


def _axis_tensor(grid: GridSpec, mat: np.ndarray, perm) -> np.ndarray:
    l_sub = mat.shape[1]
    t = mat.reshape(grid.shape4 + (l_sub,)).transpose(perm)
    return t


def _apply_w_nox(dset: DictionarySet, omega: OffGridParams, axis: str,
                 x: np.ndarray) -> np.ndarray:
    """W_nox @ x through factored Kronecker terms."""
    out = _kron_apply(*dset.factors(), x)
    for ax in AXES:
        if ax == axis:
            continue
        off = omega.get(ax)
        if off.any():
            fs = list(dset.deriv_factors(ax))
            pos = AXES.index(ax)
            fs[pos] = fs[pos] * off[None, :]
            out += _kron_apply(*fs, x)
    return out


def build_quadratic_fast(axis: str, m_g: np.ndarray, m_h: np.ndarray,
                         tau_h: np.ndarray, dset: DictionarySet,
                         omega: OffGridParams) -> QuadraticForm:
    """Low-complexity Xi_x / chi_x using the orthogonality of the delay and
    angle factors; exact whenever the current offsets are zero.

    The residual matrix V_x is still formed exactly, but matrix-free; only the
    Hadamard sandwich is approximated, so the builder never materializes an
    (n_cols x n_cols) matrix.
    """
    grid = dset.grid
    cfg = dset.cfg
    l_sub = m_h.shape[1]
    nd, mv, mh, kd = grid.shape4
    sigma_t = _sigma_diag(tau_h).reshape(grid.shape4)

    scale = {"alpha": cfg.m_total, "beta": cfg.srs_len * cfg.m_h,
             "gamma": cfg.srs_len * cfg.m_v, "eta": cfg.srs_len * cfg.m_total}[axis]

    d0 = dset.d
    w_dot_factors = dset.deriv_factors(axis)
    v = _kron_apply_adjoint(
        *w_dot_factors, m_g - _apply_w_nox(dset, omega, axis, m_h))

    mh_t = _axis_tensor(grid, m_h, _GRAM_PERM[axis])
    ax_len = grid.axis_len(axis)

    if axis == "eta":
        m_eta = mh_t.reshape(kd, -1)
        u = (m_eta @ m_eta.conj().T) / l_sub
        u[np.diag_indices_from(u)] += sigma_t.sum(axis=(0, 1, 2))
        g_dd = dset.d_dot.conj().T @ dset.d_dot
        xi = scale * np.real(g_dd.conj() * u)
        cross = np.real(np.einsum("ij,ij->j", dset.d_dot.conj(), d0)
                        * sigma_t.sum(axis=(0, 1, 2)))
        chi2 = scale * cross
    else:
        fac = {"alpha": (dset.b, dset.b_dot), "beta": (dset.cv, dset.cv_dot),
               "gamma": (dset.ch, dset.ch_dot)}[axis]
        f0, f_dot = fac
        m_pair = mh_t.reshape(ax_len * kd, -1)
        u = (m_pair @ m_pair.conj().T) / l_sub
        sig_pair = {"alpha": sigma_t.sum(axis=(1, 2)),
                    "beta": sigma_t.sum(axis=(0, 2)),
                    "gamma": sigma_t.sum(axis=(0, 1))}[axis].reshape(-1)
        u[np.diag_indices_from(u)] += sig_pair
        g_ff = f_dot.conj().T @ f_dot
        g_dd0 = d0.conj().T @ d0
        u4 = u.reshape(ax_len, kd, ax_len, kd)
        inner = np.einsum("kK,nkNK->nN", g_dd0.conj(), u4, optimize=True)
        xi = scale * np.real(g_ff.conj() * inner)
        cross = np.real(np.outer(np.einsum("ij,ij->j", f_dot.conj(), f0),
                                 np.einsum("ij,ij->j", d0.conj(), d0))
                        * sig_pair.reshape(ax_len, kd))
        chi2 = scale * cross.sum(axis=1)

    v_t = _axis_tensor(grid, v, _CHI_PERM[axis])
    mh_chi = _axis_tensor(grid, m_h, _CHI_PERM[axis])
    chi1 = np.real(mh_chi.conj() * v_t).reshape(ax_len, -1).sum(axis=1) / l_sub
    return QuadraticForm(xi=xi, chi=chi1 - chi2)


def solve_offgrid_axis(qf: QuadraticForm, grid: GridSpec, axis: str) -> np.ndarray:
    """Regularized solve of (Xi + lambda I) x = chi, clamped to half spacing."""
    xi, chi = qf.xi, qf.chi
    if not np.all(np.isfinite(xi)) or not np.all(np.isfinite(chi)):
        raise ValueError("quadratic form contains non-finite entries")
    trace = float(np.trace(xi))
    if trace <= 0.0 or not xi.any():
        return np.zeros(len(chi))
    lam = 1e-8 * trace / xi.shape[0]
    x = scipy.linalg.solve(xi + lam * np.eye(xi.shape[0]), chi, assume_a="sym")
    half = 0.5 * grid.axis_spacing(axis)
    return np.clip(x, -half, half)


def update_offgrid(dset: DictionarySet, omega: OffGridParams, m_g: np.ndarray,
                   m_h: np.ndarray, tau_h: np.ndarray, mode: str = "exact",
                   operator_mode: str = "dense") -> OffGridParams:
    """One coordinate-descent sweep over the four axes (alpha, beta, gamma,
    eta), recomposing the dictionary between axes.

    Each axis solve is safeguarded by its own quadratic model: a step that
    the model predicts to increase the objective (possible after clamping) is
    shrunk toward zero, so the expectation-step objective never increases.
    """
    if mode not in ("exact", "fast"):
        raise ValueError(f"unknown mode {mode!r}")
    build = build_quadratic_exact if mode == "exact" else build_quadratic_fast
    omega = omega.copy()
    for axis in AXES:
        qf = build(axis, m_g, m_h, tau_h, dset, omega)
        x = solve_offgrid_axis(qf, dset.grid, axis)
        # model decrease: f(x) - f(0) = x'Xi x - 2 chi'x must be <= 0
        quad = float(x @ qf.xi @ x)
        lin = float(qf.chi @ x)
        if quad - 2.0 * lin > 0.0:
            x = np.clip(lin / quad, -1.0, 1.0) * x if quad > 0 else np.zeros_like(x)
        omega.set(axis, x)
        omega.clamp(dset.grid)
    return omega
