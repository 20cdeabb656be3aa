"""Doppler-domain extrapolation of estimated channels and the NMSE metric.

A gated DAD estimate assigns each active grid column a delay/space signature
and a Doppler frequency nu_hat = nu_bar + eta_hat.  Extrapolation keeps the
delay/space part (first-order composed, exactly as the estimator modeled it;
the subband phases live inside the per-subband DAD coefficients) and swaps the
sounding-index Doppler phase for a continuous-time one:

* ``doppler_phase="exact"``:  exp(j*2*pi*t*nu_hat) - the physical phasor,
  the right choice for actual prediction horizons;
* ``doppler_phase="linear"``: exp(j*2*pi*t*nu_bar) * (1 + j*2*pi*t*eta_hat) -
  the continuous extension of the estimator's first-order model, which
  reproduces the in-window reconstruction W(omega) h exactly at the sounding
  instants t = k*delta_T.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import GridSpec, OffGridParams, SystemConfig
from .steering import steering_delay, steering_space

__all__ = ["PredictionRequest", "nmse", "extrapolate_at", "extrapolate",
           "horizon_times"]

_NMSE_FLOOR_DB = -300.0


@dataclass(frozen=True)
class PredictionRequest:
    """Future time offsets (seconds after the last sounding), sorted, > 0."""

    horizon_times: np.ndarray
    target: str = "symbols"      # "symbols" | "pilots" (bookkeeping only)

    def __post_init__(self):
        t = np.asarray(self.horizon_times, dtype=float)
        if t.size == 0:
            raise ValueError("empty prediction horizon")
        if np.any(t <= 0):
            raise ValueError("horizon times must be strictly positive")
        if np.any(np.diff(t) < 0):
            raise ValueError("horizon times must be sorted")
        if self.target not in ("symbols", "pilots"):
            raise ValueError(f"unknown target {self.target!r}")
        object.__setattr__(self, "horizon_times", t)


def horizon_times(cfg: SystemConfig, horizon: float, n_samples: int = 8) -> PredictionRequest:
    """Evenly spaced instants in (0, horizon] after the last sounding."""
    step = horizon / n_samples
    return PredictionRequest(horizon_times=step * np.arange(1, n_samples + 1))


def nmse(g_true: np.ndarray, g_hat: np.ndarray) -> float:
    """10*log10(||g_hat - g_true||_F^2 / ||g_true||_F^2); floored at -300 dB."""
    if g_true.shape != g_hat.shape:
        raise ValueError(f"shape mismatch {g_true.shape} vs {g_hat.shape}")
    denom = float(np.vdot(g_true, g_true).real)
    if denom == 0.0:
        raise ValueError("zero-energy reference channel")
    err = float(np.vdot(g_hat - g_true, g_hat - g_true).real)
    if err == 0.0:
        return _NMSE_FLOOR_DB
    return max(10.0 * np.log10(err / denom), _NMSE_FLOOR_DB)


def _delay_space_parts(idx: np.ndarray, omega: OffGridParams, grid: GridSpec,
                       cfg: SystemConfig):
    """First-order delay/space column signatures u_j and the zeroth-order
    columns w0_j for the active flat column indices, both (N*M, P)."""
    i_n, i_v, i_h, i_k = np.unravel_index(idx, grid.shape4)
    n = np.arange(cfg.srs_len)
    b = steering_delay(grid.delay_grid, cfg.srs_len, cfg.delta_f)
    cv = steering_space(grid.elev_cos_grid, cfg.m_v)
    ch = steering_space(grid.azim_cos_grid, cfg.m_h)
    b_dot = b * (-2j * np.pi * cfg.delta_f * n)[:, None]
    cv_dot = cv * (-1j * np.pi * np.arange(cfg.m_v))[:, None]
    ch_dot = ch * (-1j * np.pi * np.arange(cfg.m_h))[:, None]

    def kron3(f1, f2, f3):
        return np.einsum("np,vp,hp->nvhp", f1[:, i_n], f2[:, i_v],
                         f3[:, i_h]).reshape(-1, idx.size)

    w0 = kron3(b, cv, ch)
    u = (w0
         + omega.alpha[i_n][None, :] * kron3(b_dot, cv, ch)
         + omega.beta[i_v][None, :] * kron3(b, cv_dot, ch)
         + omega.gamma[i_h][None, :] * kron3(b, cv, ch_dot))
    nu_bar = grid.doppler_grid[i_k]
    eta = omega.eta[i_k]
    return u, w0, nu_bar, eta


def extrapolate_at(h_hat: np.ndarray, omega: OffGridParams, grid: GridSpec,
                   cfg: SystemConfig, times, doppler_phase: str = "exact") -> np.ndarray:
    """Reconstruct the channel at arbitrary sounding-axis times.

    ``h_hat`` is the (n_cols, L) gated DAD estimate; only its nonzero columns
    contribute.  Returns shape (T, N*M, L); t = k*delta_T corresponds to
    sounding k.
    """
    if doppler_phase not in ("exact", "linear"):
        raise ValueError(f"unknown doppler_phase {doppler_phase!r}")
    times = np.atleast_1d(np.asarray(times, dtype=float))
    l_sub = h_hat.shape[1]
    out_shape = (times.size, cfg.srs_len * cfg.m_total, l_sub)
    idx = np.flatnonzero(np.any(h_hat != 0, axis=1))
    if idx.size == 0:
        return np.zeros(out_shape, dtype=complex)

    u, w0, nu_bar, eta = _delay_space_parts(idx, omega, grid, cfg)
    h = h_hat[idx]
    if doppler_phase == "exact":
        phasor = np.exp(2j * np.pi * np.outer(times, nu_bar + eta))
        return np.einsum("ip,tp,pl->til", u, phasor, h)
    phasor = np.exp(2j * np.pi * np.outer(times, nu_bar))
    base = np.einsum("ip,tp,pl->til", u, phasor, h)
    corr = np.einsum("ip,tp,pl->til", w0 * eta[None, :],
                     (2j * np.pi * times)[:, None] * phasor, h)
    return base + corr


def extrapolate(h_hat: np.ndarray, omega: OffGridParams, grid: GridSpec,
                cfg: SystemConfig, request: PredictionRequest,
                doppler_phase: str = "exact") -> np.ndarray:
    """Predict the channel over a horizon request (offsets measured from the
    last sounding instant (K-1)*delta_T)."""
    t0 = (cfg.n_soundings - 1) * cfg.delta_T
    return extrapolate_at(h_hat, omega, grid, cfg,
                          t0 + request.horizon_times, doppler_phase)
