"""Off-grid DAD dictionaries: zeroth-order transform, derivative operators,
first-order composition, exact composition, and column pruning.

The zeroth-order transform is W = B x C_v x C_h x D (Kronecker product of the
per-axis steering matrices sampled on the grid).  First-order off-grid
modeling perturbs it as

    W(omega) = W + sum_x  Wdot_x * diag(R_x x),   x in {alpha, beta, gamma, eta},

where Wdot_x replaces one Kronecker factor by its derivative at zero offset
(the expansion point is never re-anchored) and R_x replicates the per-axis
offset vector across the other axes.  Because each replicated correction is
constant on an axis slice, every term stays a pure Kronecker product, which
gives the matrix-free apply/adjoint paths used at full scale.

Two operator backends implement the same interface:

* :class:`DenseDictionary` materializes W(omega) (and |W(omega)|^2); the
  trustworthy default at desk scale.
* :class:`FactoredDictionary` applies the five Kronecker terms by tensor
  contraction; |W(omega)|^2 uses the closed form |w_ij|^2 = 1 + s_ij^2 with
  s_ij the (purely imaginary) accumulated phase derivative, exact for the
  first-order composition.
"""

from __future__ import annotations

import numpy as np

from .config import AXES, GridSpec, OffGridParams, SystemConfig
from .steering import steering_delay, steering_doppler, steering_space

__all__ = [
    "DictionarySet",
    "build_dictionary",
    "compose_w",
    "exact_w",
    "apply",
    "apply_adjoint",
    "abs2_row_sums",
    "prune",
    "axis_blocks",
    "replicate_axis",
    "reduce_axis",
    "sandwich_axis",
    "dad_transform",
]

_DENSE_COL_LIMIT = 8192  # build dense W eagerly below this many columns


def axis_blocks(grid: GridSpec, axis: str):
    """Column-index block sizes (pre, ax, post) so that the flat column index
    factorizes as (pre, ax, post) with the chosen axis in the middle."""
    nd, mv, mh, kd = grid.shape4
    if axis == "alpha":
        return 1, nd, mv * mh * kd
    if axis == "beta":
        return nd, mv, mh * kd
    if axis == "gamma":
        return nd * mv, mh, kd
    if axis == "eta":
        return nd * mv * mh, kd, 1
    raise ValueError(f"unknown axis {axis!r}")


def replicate_axis(grid: GridSpec, axis: str, vec: np.ndarray) -> np.ndarray:
    """R_x vec: spread a per-axis vector over the full column index."""
    pre, ax, post = axis_blocks(grid, axis)
    return np.broadcast_to(np.asarray(vec)[None, :, None], (pre, ax, post)).reshape(-1)


def reduce_axis(grid: GridSpec, axis: str, values: np.ndarray) -> np.ndarray:
    """R_x^T values: sum a per-column vector onto the chosen axis."""
    pre, ax, post = axis_blocks(grid, axis)
    return values.reshape(pre, ax, post).sum(axis=(0, 2))


def sandwich_axis(grid: GridSpec, axis: str, mat: np.ndarray) -> np.ndarray:
    """R_x^T M R_x for a full (n_cols, n_cols) matrix."""
    pre, ax, post = axis_blocks(grid, axis)
    return mat.reshape(pre, ax, post, pre, ax, post).sum(axis=(0, 2, 3, 5))


def _kron_apply(f1, f2, f3, f4, x: np.ndarray) -> np.ndarray:
    """(f1 x f2 x f3 x f4) @ x for x of shape (n_cols, L)."""
    shp = (f1.shape[1], f2.shape[1], f3.shape[1], f4.shape[1])
    x5 = x.reshape(shp + (-1,))
    y = np.einsum("an,bv,ch,dk,nvhkl->abcdl", f1, f2, f3, f4, x5, optimize=True)
    return y.reshape(-1, x.shape[1])


def _kron_apply_adjoint(f1, f2, f3, f4, y: np.ndarray) -> np.ndarray:
    shp = (f1.shape[0], f2.shape[0], f3.shape[0], f4.shape[0])
    y5 = y.reshape(shp + (-1,))
    x = np.einsum("an,bv,ch,dk,abcdl->nvhkl", f1.conj(), f2.conj(), f3.conj(),
                  f4.conj(), y5, optimize=True)
    return x.reshape(-1, y.shape[1])


class DictionarySet:
    """Per-axis steering factors, their derivatives, and cached dense forms."""

    def __init__(self, grid: GridSpec, cfg: SystemConfig, dense: bool | None = None):
        if (grid.n_delay, grid.n_elev, grid.n_azim) != (cfg.srs_len, cfg.m_v, cfg.m_h):
            raise ValueError("grid delay/angle counts must match the sounding geometry")
        if grid.n_doppler != cfg.k_tilde:
            raise ValueError("grid Doppler count must equal S_nu * K")
        self.grid = grid
        self.cfg = cfg
        n = np.arange(cfg.srs_len)
        mv = np.arange(cfg.m_v)
        mh = np.arange(cfg.m_h)
        k = np.arange(cfg.n_soundings)

        self.b = steering_delay(grid.delay_grid, cfg.srs_len, cfg.delta_f)
        self.cv = steering_space(grid.elev_cos_grid, cfg.m_v)
        self.ch = steering_space(grid.azim_cos_grid, cfg.m_h)
        self.d = steering_doppler(grid.doppler_grid, cfg.n_soundings, cfg.delta_T)

        # phase derivatives are linear in the row index
        self._rowcoef = {
            "alpha": -2j * np.pi * cfg.delta_f * n,
            "beta": -1j * np.pi * mv,
            "gamma": -1j * np.pi * mh,
            "eta": 2j * np.pi * cfg.delta_T * k,
        }
        self.b_dot = self.b * self._rowcoef["alpha"][:, None]
        self.cv_dot = self.cv * self._rowcoef["beta"][:, None]
        self.ch_dot = self.ch * self._rowcoef["gamma"][:, None]
        self.d_dot = self.d * self._rowcoef["eta"][:, None]

        self.n_rows = cfg.n_rows
        self.n_cols = grid.n_cols
        if dense is None:
            dense = self.n_cols <= _DENSE_COL_LIMIT
        self._w_dense = None
        self._w_dot_dense: dict = {}
        self._w_dot_gram: dict = {}
        if dense:
            self.w_dense()  # build eagerly

    # ---- factor bookkeeping -------------------------------------------------

    def factors(self) -> tuple:
        return self.b, self.cv, self.ch, self.d

    def axis_factor(self, axis: str) -> np.ndarray:
        return {"alpha": self.b, "beta": self.cv, "gamma": self.ch, "eta": self.d}[axis]

    def axis_factor_dot(self, axis: str) -> np.ndarray:
        return {"alpha": self.b_dot, "beta": self.cv_dot,
                "gamma": self.ch_dot, "eta": self.d_dot}[axis]

    def deriv_factors(self, axis: str) -> tuple:
        """Factors of Wdot_x: one derivative factor, the rest zeroth order."""
        fs = list(self.factors())
        fs[AXES.index(axis)] = self.axis_factor_dot(axis)
        return tuple(fs)

    def exact_factors(self, omega: OffGridParams) -> tuple:
        g, cfg = self.grid, self.cfg
        return (
            steering_delay(g.delay_grid + omega.alpha, cfg.srs_len, cfg.delta_f),
            steering_space(g.elev_cos_grid + omega.beta, cfg.m_v),
            steering_space(g.azim_cos_grid + omega.gamma, cfg.m_h),
            steering_doppler(g.doppler_grid + omega.eta, cfg.n_soundings, cfg.delta_T),
        )

    def row_phase_slope(self, axis: str) -> np.ndarray:
        """Imag part of the per-row phase derivative, replicated over rows."""
        cfg = self.cfg
        parts = {
            "alpha": (self._rowcoef["alpha"].imag, np.ones(cfg.m_v), np.ones(cfg.m_h), np.ones(cfg.n_soundings)),
            "beta": (np.ones(cfg.srs_len), self._rowcoef["beta"].imag, np.ones(cfg.m_h), np.ones(cfg.n_soundings)),
            "gamma": (np.ones(cfg.srs_len), np.ones(cfg.m_v), self._rowcoef["gamma"].imag, np.ones(cfg.n_soundings)),
            "eta": (np.ones(cfg.srs_len), np.ones(cfg.m_v), np.ones(cfg.m_h), self._rowcoef["eta"].imag),
        }[axis]
        a, b, c, d = parts
        return np.einsum("n,v,h,k->nvhk", a, b, c, d).reshape(-1)

    # ---- dense forms --------------------------------------------------------

    def _dense_kron(self, f1, f2, f3, f4) -> np.ndarray:
        out = np.einsum("na,vb,hc,kd->nvhkabcd", f1, f2, f3, f4)
        return out.reshape(self.n_rows, self.n_cols)

    def w_dense(self) -> np.ndarray:
        if self._w_dense is None:
            self._w_dense = self._dense_kron(*self.factors())
        return self._w_dense

    def w_dot_dense(self, axis: str) -> np.ndarray:
        if axis not in self._w_dot_dense:
            self._w_dot_dense[axis] = self._dense_kron(*self.deriv_factors(axis))
        return self._w_dot_dense[axis]

    def w_dot_gram(self, axis: str) -> np.ndarray:
        """Wdot_x^H Wdot_x, cached (independent of the current offsets)."""
        if axis not in self._w_dot_gram:
            f1, f2, f3, f4 = self.deriv_factors(axis)
            self._w_dot_gram[axis] = np.einsum(
                "na,vb,hc,kd->nvhkabcd",
                (f1.conj().T @ f1), (f2.conj().T @ f2),
                (f3.conj().T @ f3), (f4.conj().T @ f4)).reshape(self.n_cols, self.n_cols)
        return self._w_dot_gram[axis]

    def compose_dense(self, omega: OffGridParams) -> np.ndarray:
        w = self.w_dense().copy()
        for axis in AXES:
            off = omega.get(axis)
            if off.any():
                w += self.w_dot_dense(axis) * replicate_axis(self.grid, axis, off)[None, :]
        return w

    def exact_dense(self, omega: OffGridParams) -> np.ndarray:
        return self._dense_kron(*self.exact_factors(omega))

    def dense_columns(self, omega: OffGridParams, col_idx: np.ndarray) -> np.ndarray:
        """Columns of W(omega) at the given flat indices (first-order form)."""
        g = self.grid
        nd, mv, mh, kd = g.shape4
        i_n, i_v, i_h, i_k = np.unravel_index(col_idx, g.shape4)
        cols = np.einsum("np,vp,hp,kp->nvhkp", self.b[:, i_n], self.cv[:, i_v],
                         self.ch[:, i_h], self.d[:, i_k]).reshape(self.n_rows, -1)
        for axis, idx in zip(AXES, (i_n, i_v, i_h, i_k)):
            off = omega.get(axis)[idx]
            if np.any(off):
                f1, f2, f3, f4 = self.deriv_factors(axis)
                term = np.einsum("np,vp,hp,kp->nvhkp", f1[:, i_n], f2[:, i_v],
                                 f3[:, i_h], f4[:, i_k]).reshape(self.n_rows, -1)
                cols = cols + term * off[None, :]
        return cols


def build_dictionary(grid: GridSpec, cfg: SystemConfig, dense: bool | None = None) -> DictionarySet:
    return DictionarySet(grid, cfg, dense=dense)


# ---- operator backends ------------------------------------------------------


class DenseDictionary:
    """W(omega) held as an explicit matrix, with |W|^2 cached."""

    def __init__(self, dset: DictionarySet, omega: OffGridParams):
        self.dset = dset
        self.omega = omega.copy()
        self.w = dset.compose_dense(omega)
        self.a2 = self.w.real ** 2 + self.w.imag ** 2
        self.n_rows, self.n_cols = self.w.shape

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.w @ x

    def apply_adjoint(self, y: np.ndarray) -> np.ndarray:
        return self.w.conj().T @ y

    def abs2_apply(self, x: np.ndarray) -> np.ndarray:
        return self.a2 @ x

    def abs2_apply_adjoint(self, y: np.ndarray) -> np.ndarray:
        return self.a2.T @ y

    def dense(self) -> np.ndarray:
        return self.w


class FactoredDictionary:
    """Matrix-free W(omega): five Kronecker terms applied by contraction."""

    def __init__(self, dset: DictionarySet, omega: OffGridParams):
        self.dset = dset
        self.omega = omega.copy()
        self.n_rows, self.n_cols = dset.n_rows, dset.n_cols
        self._terms = [(dset.factors(), None)]
        for axis in AXES:
            off = omega.get(axis)
            if off.any():
                fs = list(dset.deriv_factors(axis))
                ax_pos = AXES.index(axis)
                fs[ax_pos] = fs[ax_pos] * off[None, :]
                self._terms.append((tuple(fs), axis))
        # |w_ij|^2 = 1 + s_ij^2 with s = sum_x slope_x(i) * (R_x offs_x)(j)
        self._slopes = {axis: dset.row_phase_slope(axis) for axis in AXES}
        self._cols = {axis: replicate_axis(dset.grid, axis, omega.get(axis))
                      for axis in AXES}

    def apply(self, x: np.ndarray) -> np.ndarray:
        out = None
        for fs, _ in self._terms:
            y = _kron_apply(*fs, x)
            out = y if out is None else out + y
        return out

    def apply_adjoint(self, y: np.ndarray) -> np.ndarray:
        out = None
        for fs, _ in self._terms:
            x = _kron_apply_adjoint(*fs, y)
            out = x if out is None else out + x
        return out

    def abs2_apply(self, x: np.ndarray) -> np.ndarray:
        out = np.broadcast_to(x.sum(axis=0, keepdims=True),
                              (self.n_rows, x.shape[1])).copy()
        for ax_a in AXES:
            for ax_b in AXES:
                col = (self._cols[ax_a] * self._cols[ax_b]) @ x          # (L,)
                if np.any(col):
                    out += np.outer(self._slopes[ax_a] * self._slopes[ax_b], col)
        return out

    def abs2_apply_adjoint(self, y: np.ndarray) -> np.ndarray:
        out = np.broadcast_to(y.sum(axis=0, keepdims=True),
                              (self.n_cols, y.shape[1])).copy()
        for ax_a in AXES:
            for ax_b in AXES:
                row = (self._slopes[ax_a] * self._slopes[ax_b]) @ y      # (L,)
                if np.any(row):
                    out += np.outer(self._cols[ax_a] * self._cols[ax_b], row)
        return out

    def dense(self) -> np.ndarray:
        return self.dset.compose_dense(self.omega)


class PrunedDictionary:
    """Column-restricted operator with an index back-mapping to the full grid."""

    def __init__(self, parent, active_idx: np.ndarray):
        active_idx = np.asarray(active_idx)
        if active_idx.dtype == bool:
            active_idx = np.flatnonzero(active_idx)
        if active_idx.size == 0:
            raise ValueError("active mask selects no columns")
        self.active_idx = active_idx
        self.full_cols = parent.n_cols
        self.omega = parent.omega
        self.dset = parent.dset
        dset = parent.dset
        self.w = dset.dense_columns(parent.omega, active_idx)
        self.a2 = self.w.real ** 2 + self.w.imag ** 2
        self.n_rows, self.n_cols = self.w.shape

    def apply(self, x):
        return self.w @ x

    def apply_adjoint(self, y):
        return self.w.conj().T @ y

    def abs2_apply(self, x):
        return self.a2 @ x

    def abs2_apply_adjoint(self, y):
        return self.a2.T @ y

    def dense(self):
        return self.w

    def embed(self, values: np.ndarray, fill=0.0) -> np.ndarray:
        """Scatter per-active-column values back onto the full column grid."""
        shape = (self.full_cols,) + values.shape[1:]
        out = np.full(shape, fill, dtype=values.dtype)
        out[self.active_idx] = values
        return out


def compose_w(dset: DictionarySet, omega: OffGridParams, mode: str = "dense"):
    """First-order composed operator W(omega); omega = 0 reproduces W exactly."""
    if mode == "dense":
        return DenseDictionary(dset, omega)
    if mode == "factored":
        return FactoredDictionary(dset, omega)
    raise ValueError(f"unknown mode {mode!r}")


def exact_w(dset: DictionarySet, omega: OffGridParams) -> np.ndarray:
    """Exact off-grid matrix: every column is the true steering product at its
    offset grid point (the reference the first-order form approximates)."""
    return dset.exact_dense(omega)


def apply(op, x: np.ndarray) -> np.ndarray:
    if x.shape[0] != op.n_cols:
        raise ValueError(f"operand rows {x.shape[0]} != operator columns {op.n_cols}")
    return op.apply(x)


def apply_adjoint(op, y: np.ndarray) -> np.ndarray:
    if y.shape[0] != op.n_rows:
        raise ValueError(f"operand rows {y.shape[0]} != operator rows {op.n_rows}")
    return op.apply_adjoint(y)


def abs2_row_sums(op, weights: np.ndarray) -> np.ndarray:
    """sum_j |W_ij|^2 * weights_j (per measurement row; weights per column)."""
    w = np.asarray(weights)
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    squeeze = w.ndim == 1
    if squeeze:
        w = w[:, None]
    out = op.abs2_apply(w)
    return out[:, 0] if squeeze else out


def prune(op, active_mask) -> PrunedDictionary:
    return PrunedDictionary(op, active_mask)


def dad_transform(g: np.ndarray, dset: DictionarySet) -> np.ndarray:
    """Orthonormalized zeroth-order analysis W^H g / sqrt(NMK); for the
    non-oversampled square case this is the unitary DAD (DFT) transform."""
    op = compose_w(dset, OffGridParams.zeros(dset.grid), mode="dense"
                   if dset._w_dense is not None else "factored")
    return op.apply_adjoint(g) / np.sqrt(dset.n_rows)
