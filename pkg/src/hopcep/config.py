"""Sounding geometry, sampling grids, and multipath containers.

Conventions used throughout the package:

* Spatial directions are parametrized by directional cosines
  u = cos(elevation), v = sin(elevation)*cos(azimuth), both in [-1, 1],
  so that every steering phase is linear in its parameter and the
  vertical/horizontal array factors decouple.
* The flat row index of a frequency-space-time (FST) vector is
  n*M*K + m*K + k with m = m_v*M_h + m_h (subcarrier n, antenna m,
  sounding k; k fastest).
* The flat column index of a delay-angle-Doppler (DAD) vector is
  nd*Mt*Kt + md*Kt + kd with md = mv*Mt_h + mh.

All containers are frozen dataclasses; arrays are marked read-only after
construction so instances can be shared freely across parallel trials.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
import numpy as np

__all__ = [
    "SystemConfig",
    "GridSpec",
    "OffGridParams",
    "PathSet",
    "Scenario",
    "desk_config",
    "paper_config",
    "doppler_from_velocity",
    "SPEED_OF_LIGHT",
]

SPEED_OF_LIGHT = 299_792_458.0


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class SystemConfig:
    """Sounding-geometry scalars for one frequency-hopped SRS configuration.

    The bandwidth is split into ``n_subbands`` slices; one SRS transmission
    sounds ``srs_len`` comb-decimated subcarriers of a single subband, and the
    fullband is revisited every ``delta_T`` seconds.  Pilot symbols have unit
    power.
    """

    n_fft: int
    n_sc: int
    delta_phi: float          # subcarrier spacing, Hz
    n_subbands: int           # L
    n_comb: int               # transmission comb N_TC
    srs_len: int              # N, sounded subcarriers per SRS (= n_sc/(L*N_TC))
    m_v: int
    m_h: int
    n_soundings: int          # K, fullband rounds
    doppler_oversample: int   # S_nu, Doppler grid refinement factor
    delta_t: float            # inter-SRS interval, s
    delta_T: float            # inter-fullband interval, s
    hop_schedule: tuple = None  # q_l, permutation of range(L); identity if None
    noise_var: float = 0.0    # linear noise power sigma_z
    carrier_freq: float = 3.5e9

    def __post_init__(self):
        if self.hop_schedule is None:
            object.__setattr__(self, "hop_schedule", tuple(range(self.n_subbands)))
        for name in ("n_fft", "n_sc", "n_subbands", "n_comb", "srs_len",
                     "m_v", "m_h", "n_soundings", "doppler_oversample"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.srs_len * self.n_subbands * self.n_comb != self.n_sc:
            raise ValueError(
                "srs_len * n_subbands * n_comb must equal n_sc "
                f"({self.srs_len}*{self.n_subbands}*{self.n_comb} != {self.n_sc})")
        q = tuple(self.hop_schedule)
        if sorted(q) != list(range(self.n_subbands)):
            raise ValueError(f"hop_schedule must be a permutation of 0..L-1, got {q}")
        object.__setattr__(self, "hop_schedule", q)
        if self.delta_t <= 0 or self.delta_T <= 0:
            raise ValueError("delta_t and delta_T must be positive")
        if self.noise_var < 0:
            raise ValueError("noise_var must be nonnegative")

    @property
    def m_total(self) -> int:
        return self.m_v * self.m_h

    @property
    def delta_f(self) -> float:
        """Spacing of the sounded (comb-decimated) subcarriers, Hz."""
        return self.n_comb * self.delta_phi

    @property
    def delta_F(self) -> float:
        """Subband spacing n_sc*delta_phi/L, Hz (derived, never stored)."""
        return self.n_sc * self.delta_phi / self.n_subbands

    @property
    def k_tilde(self) -> int:
        return self.doppler_oversample * self.n_soundings

    @property
    def n_rows(self) -> int:
        """Rows of the FST observation: N*M*K."""
        return self.srs_len * self.m_total * self.n_soundings

    def with_updates(self, **kw) -> "SystemConfig":
        return replace(self, **kw)


@dataclass(frozen=True)
class GridSpec:
    """Uniform DAD sampling grids tied to a :class:`SystemConfig`.

    Delay and angle grid counts must equal the observation counts (required by
    the Kronecker Gram identities the fast hyper-parameter updates rely on);
    the Doppler grid is oversampled by S_nu over the same +-1/(2*delta_T)
    range, refining resolution without extending it.
    """

    n_delay: int
    n_elev: int
    n_azim: int
    n_doppler: int
    delay_grid: np.ndarray
    elev_cos_grid: np.ndarray
    azim_cos_grid: np.ndarray
    doppler_grid: np.ndarray
    delay_spacing: float
    elev_spacing: float
    azim_spacing: float
    doppler_spacing: float

    @classmethod
    def from_config(cls, cfg: SystemConfig) -> "GridSpec":
        nd, mv, mh, kd = cfg.srs_len, cfg.m_v, cfg.m_h, cfg.k_tilde
        d_delay = 1.0 / (nd * cfg.delta_f)
        d_elev = 2.0 / mv
        d_azim = 2.0 / mh
        d_dopp = 1.0 / (kd * cfg.delta_T)
        return cls(
            n_delay=nd, n_elev=mv, n_azim=mh, n_doppler=kd,
            delay_grid=_freeze(np.arange(nd) * d_delay),
            elev_cos_grid=_freeze(2.0 * np.arange(mv) / mv - 1.0),
            azim_cos_grid=_freeze(2.0 * np.arange(mh) / mh - 1.0),
            doppler_grid=_freeze((np.arange(kd) - kd / 2.0) * d_dopp),
            delay_spacing=d_delay,
            elev_spacing=d_elev,
            azim_spacing=d_azim,
            doppler_spacing=d_dopp,
        )

    @property
    def n_cols(self) -> int:
        return self.n_delay * self.n_elev * self.n_azim * self.n_doppler

    @property
    def shape4(self) -> tuple:
        return (self.n_delay, self.n_elev, self.n_azim, self.n_doppler)

    def axis_grid(self, axis: str) -> np.ndarray:
        return {"alpha": self.delay_grid, "beta": self.elev_cos_grid,
                "gamma": self.azim_cos_grid, "eta": self.doppler_grid}[axis]

    def axis_spacing(self, axis: str) -> float:
        return {"alpha": self.delay_spacing, "beta": self.elev_spacing,
                "gamma": self.azim_spacing, "eta": self.doppler_spacing}[axis]

    def axis_len(self, axis: str) -> int:
        return {"alpha": self.n_delay, "beta": self.n_elev,
                "gamma": self.n_azim, "eta": self.n_doppler}[axis]


AXES = ("alpha", "beta", "gamma", "eta")


@dataclass
class OffGridParams:
    """Per-grid-index offsets for the four DAD axes.

    Each entry is bounded by half the local grid spacing; :meth:`clamp`
    enforces the bound and is applied after every hyper-parameter update.
    """

    alpha: np.ndarray  # delay offsets, s
    beta: np.ndarray   # elevation-cosine offsets
    gamma: np.ndarray  # azimuth-cosine offsets
    eta: np.ndarray    # Doppler offsets, Hz

    @classmethod
    def zeros(cls, grid: GridSpec) -> "OffGridParams":
        return cls(np.zeros(grid.n_delay), np.zeros(grid.n_elev),
                   np.zeros(grid.n_azim), np.zeros(grid.n_doppler))

    def get(self, axis: str) -> np.ndarray:
        return getattr(self, axis)

    def set(self, axis: str, values: np.ndarray) -> None:
        getattr(self, axis)[:] = values

    def clamp(self, grid: GridSpec) -> "OffGridParams":
        for axis in AXES:
            half = 0.5 * grid.axis_spacing(axis)
            np.clip(self.get(axis), -half, half, out=self.get(axis))
        return self

    def copy(self) -> "OffGridParams":
        return OffGridParams(self.alpha.copy(), self.beta.copy(),
                             self.gamma.copy(), self.eta.copy())

    def flat(self) -> np.ndarray:
        return np.concatenate([self.alpha, self.beta, self.gamma, self.eta])

    def is_zero(self) -> bool:
        return not (self.alpha.any() or self.beta.any()
                    or self.gamma.any() or self.eta.any())


@dataclass(frozen=True)
class PathSet:
    """P discrete multipaths: (delay, directional cosines, Doppler, gain)."""

    delay: np.ndarray      # s, in [0, 1/delta_f)
    elev_cos: np.ndarray   # in [-1, 1]
    azim_cos: np.ndarray   # in [-1, 1]
    doppler: np.ndarray    # Hz
    gain: np.ndarray       # complex

    def __post_init__(self):
        n = len(self.delay)
        for name in ("elev_cos", "azim_cos", "doppler", "gain"):
            if len(getattr(self, name)) != n:
                raise ValueError("all path arrays must have equal length")
        if np.any(np.abs(self.elev_cos) > 1) or np.any(np.abs(self.azim_cos) > 1):
            raise ValueError("directional cosines must lie in [-1, 1]")
        if np.any(self.delay < 0):
            raise ValueError("delays must be nonnegative")
        for name in ("delay", "elev_cos", "azim_cos", "doppler"):
            object.__setattr__(self, name, _freeze(np.asarray(getattr(self, name), dtype=float)))
        object.__setattr__(self, "gain", _freeze(np.asarray(self.gain, dtype=complex)))

    def __len__(self) -> int:
        return len(self.delay)

    def validate_against(self, cfg: SystemConfig) -> None:
        """Check the no-aliasing bounds |nu| < 1/(2*delta_T), tau < 1/delta_f."""
        if np.any(np.abs(self.doppler) >= 0.5 / cfg.delta_T):
            raise ValueError("path Doppler exceeds 1/(2*delta_T); aliased")
        if np.any(self.delay >= 1.0 / cfg.delta_f):
            raise ValueError("path delay exceeds 1/delta_f; aliased")


@dataclass(frozen=True)
class Scenario:
    """Synthetic multipath scenario knobs for the channel generator."""

    n_paths: int
    delay_spread: float       # s; eligible delay vertices satisfy tau <= delay_spread
    doppler_max: float        # Hz; eligible Doppler vertices satisfy |nu| <= doppler_max
    on_grid: bool = False

    def __post_init__(self):
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if self.delay_spread < 0 or self.doppler_max < 0:
            raise ValueError("spreads must be nonnegative")


def doppler_from_velocity(velocity_mps: float, carrier_freq: float) -> float:
    """Maximum Doppler shift v*f_c/c for a UE moving at ``velocity_mps``."""
    return velocity_mps * carrier_freq / SPEED_OF_LIGHT


# 5G-NR-style timing: one OFDM symbol is 1/delta_phi plus a cyclic prefix,
# fourteen symbols per slot.
_CP_FRACTION = 288.0 / 4096.0
_SYMBOLS_PER_SLOT = 14


def symbol_duration(delta_phi: float, cp_fraction: float = _CP_FRACTION) -> float:
    return (1.0 + cp_fraction) / delta_phi


def slot_duration(delta_phi: float) -> float:
    return _SYMBOLS_PER_SLOT * symbol_duration(delta_phi)


def desk_config(**overrides) -> SystemConfig:
    """Small geometry used by the test-suite and the shipped experiments.

    512 observation rows against a 1536-column DAD grid; delta_T is chosen so
    that a 60 km/h UE at 3.5 GHz stays well inside the Doppler range.
    """
    base = dict(
        n_fft=512,
        n_sc=256,
        delta_phi=30e3,
        n_subbands=4,
        n_comb=4,
        srs_len=16,
        m_v=2,
        m_h=4,
        n_soundings=4,
        doppler_oversample=3,
        delta_t=symbol_duration(30e3),
        delta_T=2e-3,
    )
    base.update(overrides)
    return SystemConfig(**base)


def paper_config(**overrides) -> SystemConfig:
    """Full-size geometry (dictionary ~196k columns; matrix-free path only)."""
    base = dict(
        n_fft=4096,
        n_sc=3264,
        delta_phi=30e3,
        n_subbands=4,
        n_comb=4,
        srs_len=204,
        m_v=4,
        m_h=8,
        n_soundings=10,
        doppler_oversample=3,
        delta_t=symbol_duration(30e3),
        delta_T=4 * slot_duration(30e3),
    )
    base.update(overrides)
    return SystemConfig(**base)
