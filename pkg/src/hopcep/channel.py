"""Synthetic multipath channels and noisy frequency-hopped observations.

The generator draws discrete paths on (or near) the DAD sampling grid and
superposes steering Kronecker products per subband,

    g_l = sum_p a_p * (b(tau_p) x c_v(u_p) x c_h(v_p) x d(nu_p)) * psi_l(tau_p, nu_p),

which is the exact structure the estimators assume.  Gains are normalized so
the expected channel energy is scenario independent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import GridSpec, PathSet, Scenario, SystemConfig
from .steering import (steering_delay, steering_doppler,
                       steering_doppler_at_times, steering_space,
                       subband_phase)

__all__ = [
    "ReceivedSignal",
    "SubbandStats",
    "make_pilots",
    "sample_paths",
    "synth_fst_channel",
    "synth_fst_slice",
    "synth_received",
    "noise_var_for_snr",
    "empirical_subband_stats",
]


@dataclass(frozen=True)
class ReceivedSignal:
    """Observation y = diag(s) g + z with the pilot s shared by all subbands."""

    y: np.ndarray          # (NMK, L) complex
    pilots: np.ndarray     # (NMK,) unit modulus
    noise_var: float       # linear power of the complex noise


def make_pilots(cfg: SystemConfig, seed=0) -> np.ndarray:
    """Pseudo-random QPSK pilot sequence of length NMK (unit power)."""
    rng = np.random.default_rng(seed)
    quadrant = rng.integers(0, 4, size=cfg.n_rows)
    return np.exp(1j * (np.pi / 4 + np.pi / 2 * quadrant))


def _eligible_indices(grid: GridSpec, scenario: Scenario):
    tol = 1e-12
    i_delay = np.flatnonzero(grid.delay_grid <= scenario.delay_spread + tol)
    i_dopp = np.flatnonzero(np.abs(grid.doppler_grid) <= scenario.doppler_max + tol)
    if i_delay.size == 0:
        i_delay = np.array([0])
    if i_dopp.size == 0:
        # fall back to the vertex closest to zero Doppler
        i_dopp = np.array([int(np.argmin(np.abs(grid.doppler_grid)))])
    return i_delay, i_dopp


def _offset_bounds(grid_vals: np.ndarray, half: float, idx: np.ndarray, lower_floor=None):
    """Uniform offset bounds +-half, shrunk where an offset would leave the
    parameter domain (tau >= 0, |cosine| <= 1)."""
    lo = np.full(idx.shape, -half)
    hi = np.full(idx.shape, half)
    if lower_floor is not None:
        lo = np.maximum(lo, lower_floor - grid_vals[idx])
    return lo, hi


def sample_paths(scenario: Scenario, grid: GridSpec, cfg: SystemConfig,
                 seed=0) -> PathSet:
    """Draw a PathSet on the grid (``on_grid``) or vertex +- uniform offsets.

    In on-grid mode the P paths occupy distinct grid vertices.  Gains are
    i.i.d. CN(0, 1/P) so the total average path power is one.
    """
    if scenario.doppler_max >= 0.5 / cfg.delta_T:
        raise ValueError("scenario doppler_max must stay below 1/(2*delta_T)")
    rng = np.random.default_rng(seed)
    p = scenario.n_paths
    i_delay, i_dopp = _eligible_indices(grid, scenario)
    n_eligible = i_delay.size * grid.n_elev * grid.n_azim * i_dopp.size

    if scenario.on_grid:
        if p > n_eligible:
            raise ValueError(
                f"on_grid scenario with {p} paths exceeds {n_eligible} eligible vertices")
        flat = rng.choice(n_eligible, size=p, replace=False)
    else:
        flat = rng.integers(0, n_eligible, size=p)

    # unravel over the eligible (delay, elev, azim, doppler) subgrid
    sub_shape = (i_delay.size, grid.n_elev, grid.n_azim, i_dopp.size)
    sd, se, sa, sk = np.unravel_index(flat, sub_shape)
    idx_d, idx_e, idx_a, idx_k = i_delay[sd], se, sa, i_dopp[sk]

    tau = grid.delay_grid[idx_d].copy()
    u = grid.elev_cos_grid[idx_e].copy()
    v = grid.azim_cos_grid[idx_a].copy()
    nu = grid.doppler_grid[idx_k].copy()

    if not scenario.on_grid:
        lo, hi = _offset_bounds(grid.delay_grid, 0.5 * grid.delay_spacing, idx_d, lower_floor=0.0)
        tau += rng.uniform(lo, hi)
        lo, hi = _offset_bounds(grid.elev_cos_grid, 0.5 * grid.elev_spacing, idx_e, lower_floor=-1.0)
        u += rng.uniform(lo, hi)
        lo, hi = _offset_bounds(grid.azim_cos_grid, 0.5 * grid.azim_spacing, idx_a, lower_floor=-1.0)
        v += rng.uniform(lo, hi)
        nu += rng.uniform(-0.5 * grid.doppler_spacing, 0.5 * grid.doppler_spacing, size=p)

    gain = (rng.standard_normal(p) + 1j * rng.standard_normal(p)) * np.sqrt(0.5 / p)
    paths = PathSet(delay=tau, elev_cos=u, azim_cos=v, doppler=nu, gain=gain)
    paths.validate_against(cfg)
    return paths


def _path_atoms(paths: PathSet, cfg: SystemConfig) -> np.ndarray:
    """Per-path FST steering vectors, shape (NMK, P)."""
    b = steering_delay(paths.delay, cfg.srs_len, cfg.delta_f)          # (N, P)
    cv = steering_space(paths.elev_cos, cfg.m_v)                       # (Mv, P)
    ch = steering_space(paths.azim_cos, cfg.m_h)                       # (Mh, P)
    d = steering_doppler(paths.doppler, cfg.n_soundings, cfg.delta_T)  # (K, P)
    w = np.einsum("np,vp,hp,kp->nvhkp", b, cv, ch, d)
    return w.reshape(cfg.n_rows, len(paths))


def _subband_coefs(paths: PathSet, cfg: SystemConfig) -> np.ndarray:
    """Gain times subband phase, shape (P, L)."""
    psi = np.stack([subband_phase(l, paths.delay, paths.doppler, cfg)
                    for l in range(cfg.n_subbands)], axis=1)
    return paths.gain[:, None] * psi


def synth_fst_channel(paths: PathSet, cfg: SystemConfig) -> np.ndarray:
    """FST channel matrix G, shape (NMK, L); row n*M*K + m*K + k, column l."""
    paths.validate_against(cfg)
    return _path_atoms(paths, cfg) @ _subband_coefs(paths, cfg)


def synth_fst_slice(paths: PathSet, cfg: SystemConfig, times) -> np.ndarray:
    """Frequency-space channel at arbitrary instants on the sounding time axis.

    Returns shape (T, N*M, L); ``times`` in seconds with sounding k at
    t = k*delta_T (the l-th subband additionally carries its l*delta_t
    offset inside psi_l, exactly as in the sounding-window model).
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    b = steering_delay(paths.delay, cfg.srs_len, cfg.delta_f)
    cv = steering_space(paths.elev_cos, cfg.m_v)
    ch = steering_space(paths.azim_cos, cfg.m_h)
    atoms = np.einsum("np,vp,hp->nvhp", b, cv, ch).reshape(-1, len(paths))
    phasor = steering_doppler_at_times(paths.doppler, times)           # (T, P)
    coefs = _subband_coefs(paths, cfg)                                 # (P, L)
    return np.einsum("ip,tp,pl->til", atoms, phasor, coefs)


def noise_var_for_snr(g: np.ndarray, snr_db: float) -> float:
    """Noise power solving SNR = 10*log10(||G||_F^2 / (NMKL*sigma_z))."""
    energy = float(np.vdot(g, g).real)
    if energy == 0.0:
        raise ValueError("zero-energy channel: SNR is undefined")
    if np.isinf(snr_db) and snr_db > 0:
        return 0.0
    return energy / (g.size * 10.0 ** (snr_db / 10.0))


def synth_received(g: np.ndarray, pilots: np.ndarray, snr_db: float,
                   seed=0) -> ReceivedSignal:
    """Observe y = diag(s) g + z at the requested SNR (i.i.d. CN noise)."""
    if pilots.shape[0] != g.shape[0]:
        raise ValueError("pilot length must match channel rows")
    if not np.allclose(np.abs(pilots), 1.0, atol=1e-9):
        raise ValueError("pilots must be unit modulus")
    sigma_z = noise_var_for_snr(g, snr_db)
    y = pilots[:, None] * g
    if sigma_z > 0.0:
        rng = np.random.default_rng(seed)
        y = y + np.sqrt(sigma_z / 2) * (rng.standard_normal(g.shape)
                                        + 1j * rng.standard_normal(g.shape))
    return ReceivedSignal(y=y, pilots=pilots, noise_var=sigma_z)


@dataclass(frozen=True)
class SubbandStats:
    """Monte-Carlo subband statistics.

    ``cov`` stacks the per-subband sample covariances E[g_l g_l^H].
    ``cov_diff_fro[l]`` is ||cov_l - cov_0||_F from the full sample while
    ``cov_diff_fro_batches[b, l]`` holds the same statistic per batch, giving
    a plug-in standard error (batch estimates scale like sqrt(n_batches)).
    ``cross_corr[l, l', i]`` is the sample mean of g_il * conj(g_il') and
    ``cross_se`` its per-element standard error.
    """

    trials: int
    cov: np.ndarray                   # (L, NMK, NMK)
    cov_diff_fro: np.ndarray          # (L,)
    cov_diff_fro_batches: np.ndarray  # (B, L)
    cov_ref_fro: float                # ||cov_0||_F
    cross_corr: np.ndarray            # (L, L, NMK)
    cross_se: np.ndarray              # (L, L, NMK)


def empirical_subband_stats(trials: int, scenario: Scenario, grid: GridSpec,
                            cfg: SystemConfig, seed=0, n_batches: int = 10) -> SubbandStats:
    """Estimate per-subband covariances and cross-subband correlations.

    Rich-scattering scenarios (large ``scenario.n_paths``) should show
    subband-independent covariances and vanishing cross-subband correlation.
    """
    if trials < n_batches:
        raise ValueError("trials must be at least n_batches")
    L, rows = cfg.n_subbands, cfg.n_rows
    cov_sum = np.zeros((L, rows, rows), dtype=complex)
    cross_sum = np.zeros((L, L, rows), dtype=complex)
    cross_sq = np.zeros((L, L, rows))
    batch_diffs = []
    root = np.random.default_rng(seed)
    trial_seeds = root.spawn(trials)

    splits = np.array_split(np.arange(trials), n_batches)
    for batch in splits:
        bcov = np.zeros_like(cov_sum)
        for t in batch:
            g = synth_fst_channel(
                sample_paths(scenario, grid, cfg, seed=trial_seeds[t]), cfg)
            bcov += np.einsum("il,jl->lij", g, g.conj())
            cross_sum += np.einsum("il,im->lmi", g, g.conj())
            cross_sq += np.einsum("il,im->lmi", np.abs(g) ** 2, np.abs(g) ** 2)
        cov_sum += bcov
        bcov /= len(batch)
        batch_diffs.append([np.linalg.norm(bcov[l] - bcov[0]) for l in range(L)])

    cov = cov_sum / trials
    cross = cross_sum / trials
    # per-element variance of the product g_l*conj(g_l'); SE of its mean
    var = np.maximum(cross_sq / trials - np.abs(cross) ** 2, 0.0)
    se = np.sqrt(var / trials)
    diffs = np.array([np.linalg.norm(cov[l] - cov[0]) for l in range(L)])
    return SubbandStats(
        trials=trials,
        cov=cov,
        cov_diff_fro=diffs,
        cov_diff_fro_batches=np.asarray(batch_diffs),
        cov_ref_fro=float(np.linalg.norm(cov[0])),
        cross_corr=cross,
        cross_se=se,
    )
