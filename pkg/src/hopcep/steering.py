"""Steering-vector primitives and the DFT sampling kernel.

Phase conventions (entry index n starting at 0):

* delay:      b_n(tau) = exp(-j*2*pi*n*delta_f*tau)
* space:      c_n(u)   = exp(-j*pi*n*u), u a directional cosine
* Doppler:    d_n(nu)  = exp(+j*2*pi*n*delta_T*nu)   (note the + sign)
* subband l:  psi_l(tau, nu) = exp(+j*2*pi*(l*delta_t*nu - q_l*delta_F*tau))

All outputs have unit-modulus entries.
"""

from __future__ import annotations

import numpy as np

from .config import SystemConfig

__all__ = [
    "steering_delay",
    "steering_space",
    "steering_doppler",
    "steering_doppler_at_times",
    "subband_phase",
    "sinc_kernel",
]

_SIN_EPS = 1e-12   # switch to the analytic limit of the Dirichlet ratio


def steering_delay(tau, n_entries: int, delta_f: float) -> np.ndarray:
    """Delay steering vector; ``tau`` may be scalar or an array of delays.

    Returns shape (n_entries,) for scalar tau, else (n_entries, len(tau)).
    """
    n = np.arange(n_entries)
    phase = -2j * np.pi * delta_f * np.multiply.outer(n, np.asarray(tau))
    return np.exp(phase)


def steering_space(u, n_entries: int) -> np.ndarray:
    """Array-factor steering vector in a directional cosine u = cos(theta)
    (vertical) or u = sin(theta)*cos(phi) (horizontal)."""
    n = np.arange(n_entries)
    return np.exp(-1j * np.pi * np.multiply.outer(n, np.asarray(u)))


def steering_doppler(nu, n_entries: int, delta_T: float) -> np.ndarray:
    """Doppler steering vector over sounding indices (positive phase sign)."""
    n = np.arange(n_entries)
    return np.exp(2j * np.pi * delta_T * np.multiply.outer(n, np.asarray(nu)))


def steering_doppler_at_times(nu, times) -> np.ndarray:
    """Doppler phasors exp(j*2*pi*t*nu) at arbitrary times on the sounding
    axis (t = k*delta_T reproduces :func:`steering_doppler`)."""
    return np.exp(2j * np.pi * np.multiply.outer(np.asarray(times), np.asarray(nu)))


def subband_phase(l: int, tau, nu, cfg: SystemConfig):
    """Phase offset of subband ``l``: carries the hop's frequency shift
    (q_l * delta_F acting on the delay) and its time slot (l * delta_t acting
    on the Doppler)."""
    if not 0 <= l < cfg.n_subbands:
        raise ValueError(f"subband index {l} outside [0, {cfg.n_subbands})")
    q_l = cfg.hop_schedule[l]
    return np.exp(2j * np.pi * (l * cfg.delta_t * np.asarray(nu)
                                - q_l * cfg.delta_F * np.asarray(tau)))


def sinc_kernel(x, n: int):
    """Periodic DFT sampling kernel
    f_N(x) = (1/sqrt(N)) * exp(-j*pi*(N-1)*x) * sin(pi*N*x)/sin(pi*x),
    continuous at integer x via the limit f_N(m) = sqrt(N)*exp(-j*pi*(N-1)*m).

    Equals the normalized geometric sum (1/sqrt(N)) * sum_n exp(-j*2*pi*n*x).
    """
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    s = np.sin(np.pi * x)
    out = np.empty(x.shape, dtype=complex)
    near = np.abs(s) < _SIN_EPS
    reg = ~near
    out[reg] = (np.exp(-1j * np.pi * (n - 1) * x[reg])
                * np.sin(np.pi * n * x[reg]) / s[reg]) / np.sqrt(n)
    if near.any():
        m = np.round(x[near])
        out[near] = np.sqrt(n) * np.exp(-1j * np.pi * (n - 1) * m)
    return out[0] if scalar else out
