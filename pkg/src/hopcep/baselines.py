"""Reference estimators: greedy pursuit (OMP / SOMP) and the degenerate
EM-BG-AMP / EM-BG-AMP-MMV loop.

The AMP baselines are written directly from the degenerate update equations
(no off-grid model, both 1/(NMK) correction terms dropped) on purpose, so
they double as an independent per-iteration oracle for the message-passing
engine's degenerate mode.  Do not refactor them to share engine code.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

__all__ = ["GreedyResult", "omp", "somp", "AmpOptions", "AmpResult", "em_bg_amp"]


@dataclass
class GreedyResult:
    support: np.ndarray          # selected column indices, in selection order
    coef: np.ndarray             # (len(support), L) least-squares coefficients
    residual_norms: np.ndarray   # per-iteration residual Frobenius norms
    dropped: list = field(default_factory=list)  # atoms removed on rank failure

    def embed(self, n_cols: int) -> np.ndarray:
        h = np.zeros((n_cols, self.coef.shape[1]), dtype=complex)
        h[self.support] = self.coef
        return h


def _greedy(y: np.ndarray, s: np.ndarray, w: np.ndarray, sparsity_k: int,
            joint: bool, stop_tol: float | None) -> GreedyResult:
    if sparsity_k > w.shape[0]:
        raise ValueError("sparsity_k cannot exceed the number of measurements")
    a = s[:, None] * w                      # sensing matrix diag(s) @ W
    resid = y.copy()
    support: list[int] = []
    dropped: list[int] = []
    norms = [float(np.linalg.norm(resid))]
    coef = np.zeros((0, y.shape[1]), dtype=complex)
    excluded = np.zeros(w.shape[1], dtype=bool)

    while len(support) < sparsity_k:
        corr = a.conj().T @ resid           # (n_cols, L)
        score = np.abs(corr) ** 2
        if joint:
            score = score.sum(axis=1)
        else:
            score = score[:, 0]
        score[excluded] = -1.0
        j = int(np.argmax(score))           # ties resolve to the lowest index
        if score[j] <= 0:
            break
        support.append(j)
        excluded[j] = True
        sub = a[:, support]
        coef, _, rank, _ = np.linalg.lstsq(sub, y, rcond=None)
        if rank < len(support):
            bad = support.pop()
            dropped.append(bad)
            coef = (np.linalg.lstsq(a[:, support], y, rcond=None)[0]
                    if support else np.zeros((0, y.shape[1]), dtype=complex))
        resid = y - a[:, support] @ coef
        norms.append(float(np.linalg.norm(resid)))
        if stop_tol is not None and norms[-1] <= stop_tol * norms[0]:
            break

    return GreedyResult(support=np.array(support, dtype=int), coef=coef,
                        residual_norms=np.array(norms), dropped=dropped)


def omp(y_l: np.ndarray, s: np.ndarray, w: np.ndarray, sparsity_k: int,
        stop_tol: float | None = None) -> GreedyResult:
    """Orthogonal matching pursuit on a single subband column.

    Greedy column selection by correlation magnitude against diag(s) W, with
    a least-squares refit of all selected coefficients each round.
    """
    y = y_l[:, None] if y_l.ndim == 1 else y_l
    if y.shape[1] != 1:
        raise ValueError("omp expects a single measurement column; use somp")
    return _greedy(y, s, w, sparsity_k, joint=False, stop_tol=stop_tol)


def somp(y: np.ndarray, s: np.ndarray, w: np.ndarray, sparsity_k: int,
         stop_tol: float | None = None) -> GreedyResult:
    """Simultaneous OMP: one shared support scored by the summed squared
    correlations over all L subband columns, per-column coefficients."""
    return _greedy(y, s, w, sparsity_k, joint=True, stop_tol=stop_tol)


# ---------------------------------------------------------------------------
# Degenerate AMP baseline (independent implementation, kept deliberately
# literal; matches the engine's degenerate mode to floating-point noise).
# ---------------------------------------------------------------------------

_FLOOR = 1e-12
_LLR_CLIP = 40.0
_RHO_BOUNDS = (1e-6, 1.0 - 1e-6)


@dataclass
class AmpOptions:
    iterations: int = 40
    kappa: float = 0.7
    llr_threshold: float = 0.0
    rho_init: float = 0.2
    sigma_init: float = 1.0


@dataclass
class AmpResult:
    h_hat: np.ndarray
    mu_h: np.ndarray
    llr: np.ndarray
    zeta: np.ndarray
    active_mask: np.ndarray
    g_est: np.ndarray
    rho: np.ndarray | float
    sigma: np.ndarray
    iterations_used: int
    states: list = field(default_factory=list)


def em_bg_amp(y: np.ndarray, s: np.ndarray, w: np.ndarray, sigma_z: float,
              opts: AmpOptions | None = None, mmv: bool = True,
              record_states: bool = False) -> AmpResult:
    """EM-BG-AMP (per-column hyper-parameters) or EM-BG-AMP-MMV (shared).

    ``w`` is the zeroth-order dictionary; the Bernoulli-Gaussian prior's
    activity, slab variance and activity rate are re-estimated by EM every
    iteration.  With ``mmv`` the activity/LLR and the hyper-parameters are
    shared across the L measurement columns, otherwise each column runs its
    own.
    """
    opts = opts or AmpOptions()
    n_rows, n_cols = w.shape
    n_sub = y.shape[1]
    a2 = w.real ** 2 + w.imag ** 2
    wh = w.conj().T
    sy = s.conj()[:, None] * y
    # same EM collapse guard as the engine: slab variances never drop below
    # the matched-filter noise level
    sigma_floor = max(_FLOOR, (0.0 if np.isinf(sigma_z) else sigma_z) / n_rows)

    mu_h = np.zeros((n_cols, n_sub), dtype=complex)
    tau_h = np.ones((n_cols, n_sub))
    alpha = np.zeros((n_rows, n_sub), dtype=complex)
    beta = np.ones((n_cols, n_sub))
    rho = np.full(n_sub, opts.rho_init) if not mmv else opts.rho_init
    sigma = (np.full((n_cols, n_sub), opts.sigma_init) if not mmv
             else np.full(n_cols, opts.sigma_init))
    zeta = (np.full((n_cols, n_sub), 0.5) if not mmv else np.full(n_cols, 0.5))
    llr = None
    states = []

    for it in range(1, opts.iterations + 1):
        tau_q = np.maximum(a2 @ (1.0 / beta), _FLOOR)
        mu_q = -alpha * tau_q + w @ mu_h
        if np.isinf(sigma_z):
            mu_g, tau_g = mu_q.copy(), tau_q.copy()
        elif sigma_z == 0.0:
            mu_g, tau_g = sy.copy(), np.zeros_like(tau_q)
        else:
            tau_g = tau_q * sigma_z / (tau_q + sigma_z)
            mu_g = tau_g * (mu_q / tau_q + sy / sigma_z)
        eps = np.maximum(1.0 / tau_q - tau_g / tau_q ** 2, _FLOOR)
        alpha = (mu_g - mu_q) / tau_q

        tau_r = np.maximum(1.0 / (a2.T @ eps), _FLOOR)
        beta = opts.kappa * np.clip(1.0 / tau_h, _FLOOR, 1.0 / _FLOOR) \
            + (1.0 - opts.kappa) * beta
        mu_r = mu_h + tau_r * (wh @ alpha)

        sig2d = sigma if not mmv else sigma[:, None]
        z2d = zeta if not mmv else zeta[:, None]
        v_slab = sig2d * tau_r / (sig2d + tau_r)
        m_slab = v_slab * mu_r / tau_r
        mu_new = z2d * m_slab
        tau_h = np.maximum(z2d * (np.abs(m_slab) ** 2 + v_slab)
                           - np.abs(mu_new) ** 2, _FLOOR)
        mu_h = opts.kappa * mu_new + (1.0 - opts.kappa) * mu_h

        evidence = (np.log(tau_r) - np.log(tau_r + sig2d)
                    + np.abs(mu_r) ** 2 * sig2d / (tau_r * (tau_r + sig2d)))
        if mmv:
            llr = np.clip(np.log(rho / (1 - rho)) + evidence.sum(axis=1),
                          -_LLR_CLIP, _LLR_CLIP)
            zeta = expit(llr)
            rho = float(np.clip(zeta.mean(), *_RHO_BOUNDS))
            sigma = np.maximum((np.abs(mu_h) ** 2 + tau_h).mean(axis=1), sigma_floor)
        else:
            llr = np.clip(np.log(rho / (1 - rho))[None, :] + evidence,
                          -_LLR_CLIP, _LLR_CLIP)
            zeta = expit(llr)
            rho = np.clip(zeta.mean(axis=0), *_RHO_BOUNDS)
            sigma = np.maximum(np.abs(mu_h) ** 2 + tau_h, sigma_floor)

        if not np.all(np.isfinite(mu_h)):
            raise RuntimeError(f"em_bg_amp diverged at iteration {it}")
        if record_states:
            states.append({"mu_h": mu_h.copy(), "tau_h": tau_h.copy(),
                           "alpha_g": alpha.copy(), "beta_h": beta.copy(),
                           "mu_r": mu_r.copy(), "tau_r": tau_r.copy(),
                           "zeta": np.array(zeta, copy=True),
                           "llr": np.array(llr, copy=True),
                           "rho": rho, "sigma": np.array(sigma, copy=True)})

    active = llr > opts.llr_threshold
    gate = active[:, None] if active.ndim == 1 else active
    h_hat = np.where(gate, mu_h, 0.0)
    return AmpResult(h_hat=h_hat, mu_h=mu_h, llr=llr, zeta=zeta,
                     active_mask=active, g_est=w @ h_hat, rho=rho, sigma=sigma,
                     iterations_used=opts.iterations, states=states)
