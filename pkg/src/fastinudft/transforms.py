"""Uniform FFT wrappers and nonuniform fast transforms (type-2 and type-3).

The nonuniform transforms use exponential-of-semicircle (ES) gridding on an
oversampled power-of-two grid.  Power-of-two grids make ``n*x`` exact in
floating point, which keeps the phase error independent of ``N``.

Every plan can also be built with ``exact=True``; it then applies the dense
matrix and is used as ground truth in tests.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.fft

from ._gridding import BACKEND, GridOperator
from .problem import expi2pi_product, type2_matrix

__all__ = [
    "BACKEND",
    "UniformTransformPlan",
    "NufftPlan",
    "Type2Plan",
    "Type3Plan",
    "uniform_forward",
    "uniform_inverse",
    "nufft_type2_forward",
    "nufft_type2_adjoint",
    "nufft_type3_forward",
    "nufft_type3_adjoint",
    "kernel_width",
    "set_fft_workers",
    "WIDTH_TABLE",
]

_FFT_WORKERS = 1

# Kernel width needed per digit of requested accuracy (index = ceil(-log10 tol)).
# Calibrated against the dense oracles at oversampling 2 with beta = 2.30*w,
# over type-2 and type-3, forward and adjoint, N <= 1024 (see tests).
WIDTH_TABLE = {
    1: 3, 2: 4, 3: 5, 4: 6, 5: 7, 6: 8, 7: 9, 8: 10,
    9: 11, 10: 12, 11: 13, 12: 14, 13: 15, 14: 16, 15: 16,
}
_BETA_PER_WIDTH = 2.30

# cap on grid entries held at once; batches of columns are split to respect it
_MAX_GRID_ENTRIES = 1 << 24


def set_fft_workers(n: int) -> None:
    """Number of threads scipy.fft may use for the uniform transforms."""
    global _FFT_WORKERS
    _FFT_WORKERS = max(1, int(n))


def kernel_width(tol: float) -> int:
    """Smallest tabulated ES kernel width meeting ``tol``."""
    _check_tol(tol)
    digits = max(1, math.ceil(-math.log10(tol) - 1e-9))
    return WIDTH_TABLE[min(digits, 15)]


def _check_tol(tol):
    if not (1e-15 < tol < 1e-1):
        raise ValueError(f"tolerance must lie in (1e-15, 1e-1), got {tol}")


def _next_pow2(n: int) -> int:
    return 1 << max(0, int(n - 1).bit_length())


def _es_fourier(xi, width, beta):
    """Fourier transform of the ES kernel (support ``width`` cells) at ``xi``
    cycles per cell, by Gauss-Legendre quadrature."""
    nodes, wts = np.polynomial.legendre.leggauss(4 * width + 24)
    phi = np.exp(beta * (np.sqrt(1.0 - nodes**2) - 1.0))
    xi = np.asarray(xi, dtype=np.float64)
    arg = np.pi * width * np.multiply.outer(xi, nodes)
    return (0.5 * width) * (np.cos(arg) @ (wts * phi))


def _as_columns(a, n, what):
    a = np.asarray(a)
    if a.ndim not in (1, 2) or a.shape[0] != n:
        raise ValueError(f"{what}: expected leading dimension {n}, got shape {a.shape}")
    return a.reshape(n, -1).astype(np.complex128, copy=False), a.ndim == 1


def _batches(ncol, rows):
    step = max(1, _MAX_GRID_ENTRIES // max(rows, 1))
    for s in range(0, ncol, step):
        yield slice(s, min(ncol, s + step))


class UniformTransformPlan:
    """DFT of length ``N`` with ``F[j, k] = exp(-2*pi*i*j*k/N)``.

    ``forward`` applies ``F`` and ``inverse`` applies ``F^{-1} = conj(F)/N``.
    Both act along axis 0 so column batches are transformed together.
    """

    def __init__(self, N: int):
        if N < 1:
            raise ValueError("transform size must be positive")
        self.N = int(N)

    def _check(self, v):
        v = np.asarray(v)
        if v.ndim == 0 or v.shape[0] != self.N:
            raise ValueError(f"expected length {self.N} along axis 0, got {v.shape}")
        return v

    def forward(self, v):
        return scipy.fft.fft(self._check(v), axis=0, workers=_FFT_WORKERS)

    def inverse(self, v):
        return scipy.fft.ifft(self._check(v), axis=0, workers=_FFT_WORKERS)


def uniform_forward(plan: UniformTransformPlan, v):
    return plan.forward(v)


def uniform_inverse(plan: UniformTransformPlan, v):
    return plan.inverse(v)


class NufftPlan:
    """Common fields of the nonuniform plans.

    Attributes
    ----------
    points : ndarray
        Sample points ``x_j``.
    tolerance : float
        Requested relative accuracy.
    kernel_width : int
        ES kernel support in grid cells (0 in exact mode).
    oversampling : float
        Fine grid length over number of modes.
    exact : bool
        Whether the plan applies the dense matrix instead.
    """

    kind = ""

    def _init_common(self, x, tol, exact):
        _check_tol(tol)
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.ndim != 1 or x.size == 0:
            raise ValueError("points must be a nonempty 1-D array")
        if not np.all(np.isfinite(x)):
            raise ValueError("points must be finite")
        x.setflags(write=False)
        self.points = x
        self.M = x.size
        self.tolerance = float(tol)
        self.exact = bool(exact)
        self.kernel_width = 0 if exact else kernel_width(tol)
        self.beta = _BETA_PER_WIDTH * self.kernel_width

    def __call__(self, u):
        return self.forward(u)


class Type2Plan(NufftPlan):
    """Type-2 transform ``f_j = sum_{l=0}^{N'-1} exp(2*pi*i*x_j*(l + offset)) u_l``.

    Parameters
    ----------
    x : array_like
        Sample points, any real values.
    n_modes : int
        Number of columns ``N'``.
    tol : float, optional
        Relative accuracy.
    mode_offset : int, optional
        Integer shift of the column frequencies.
    exact : bool, optional
        Apply the dense matrix instead of the fast algorithm.
    backend : str, optional
        Gridding backend override ("compiled" or "python").
    """

    kind = "type2"

    def __init__(self, x, n_modes, tol=1e-12, mode_offset=0, exact=False, backend=None):
        self._init_common(x, tol, exact)
        if n_modes < 1:
            raise ValueError("number of modes must be positive")
        self.n_modes = int(n_modes)
        self.mode_offset = int(mode_offset)
        if exact:
            self.oversampling = 1.0
            return
        w = self.kernel_width
        self.n_grid = _next_pow2(max(2 * self.n_modes, 2 * w))
        self.oversampling = self.n_grid / self.n_modes
        half = self.n_modes // 2
        m = np.arange(self.n_modes) - half
        self._grid_index = np.mod(m, self.n_grid)
        self._deconv = 1.0 / _es_fourier(m / self.n_grid, w, self.beta)
        self._phase = expi2pi_product(self.points, float(self.mode_offset + half))
        self._grid = GridOperator(self.points * self.n_grid, self.n_grid, w, self.beta, backend)

    def forward(self, u):
        cols, squeeze = _as_columns(u, self.n_modes, "type-2 forward")
        if self.exact:
            out = self._dense() @ cols
        else:
            out = self._forward_rows(np.ascontiguousarray(cols.T)).T
        return out[:, 0] if squeeze else out

    def adjoint(self, f):
        cols, squeeze = _as_columns(f, self.M, "type-2 adjoint")
        if self.exact:
            out = self._dense().conj().T @ cols
        else:
            out = self._adjoint_rows(np.ascontiguousarray(cols.T)).T
        return out[:, 0] if squeeze else out

    # batch-major kernels: inputs and outputs are (s, length) stacks
    def _forward_rows(self, rows):
        out = np.empty((rows.shape[0], self.M), dtype=np.complex128)
        for sl in _batches(rows.shape[0], self.n_grid):
            c = np.zeros((sl.stop - sl.start, self.n_grid), dtype=np.complex128)
            c[:, self._grid_index] = rows[sl] * self._deconv
            g = scipy.fft.ifft(c, axis=1, norm="forward", workers=_FFT_WORKERS, overwrite_x=True)
            out[sl] = self._grid.interp(g) * self._phase
        return out

    def _adjoint_rows(self, rows):
        out = np.empty((rows.shape[0], self.n_modes), dtype=np.complex128)
        for sl in _batches(rows.shape[0], self.n_grid):
            g = self._grid.spread(rows[sl] * self._phase.conj())
            c = scipy.fft.fft(g, axis=1, workers=_FFT_WORKERS, overwrite_x=True)
            out[sl] = c[:, self._grid_index] * self._deconv
        return out

    def _dense(self):
        return type2_matrix(self.points, self.n_modes, self.mode_offset)


class Type3Plan(NufftPlan):
    """Type-3 transform ``f_j = sum_k exp(2*pi*i*x_j*omega_k) u_k``.

    Designed for ``x`` in [0, 1) and real ``omega``.  Frequencies are spread
    onto a half-integer grid, a type-2 transform evaluates the result at the
    rescaled points, and the kernel's Fourier transform is divided out.
    """

    kind = "type3"

    def __init__(self, x, omega, tol=1e-12, exact=False, backend=None):
        self._init_common(x, tol, exact)
        w_arr = np.ascontiguousarray(omega, dtype=np.float64)
        if w_arr.ndim != 1 or w_arr.size == 0 or not np.all(np.isfinite(w_arr)):
            raise ValueError("frequencies must be a nonempty finite 1-D array")
        w_arr.setflags(write=False)
        self.frequencies = w_arr
        self.N = w_arr.size
        if exact:
            self.oversampling = 1.0
            return
        w = self.kernel_width
        center = float(np.rint(0.5 * (w_arr.min() + w_arr.max())))
        shifted = w_arr - center  # exact: center is an integer near omega
        a = 2.0 * shifted  # coordinate on the half-integer frequency grid
        p_min = int(np.floor(a.min() - 0.5 * w)) - 1
        p_max = int(np.ceil(a.max() + 0.5 * w)) + 1
        n_freq = p_max - p_min + 1
        self._spread_op = GridOperator(a - p_min, n_freq, w, self.beta, backend)
        self._pre = expi2pi_product(0.5, shifted)
        y = 0.5 * (self.points - 0.5)
        self._inner = Type2Plan(y, n_freq, tol, mode_offset=p_min, backend=backend)
        self.oversampling = self._inner.n_grid / self.N
        self._post = expi2pi_product(self.points, center) / _es_fourier(y, w, self.beta)

    def forward(self, u):
        cols, squeeze = _as_columns(u, self.N, "type-3 forward")
        if self.exact:
            out = self._dense() @ cols
        else:
            out = self._forward_rows(np.ascontiguousarray(cols.T)).T
        return out[:, 0] if squeeze else out

    def adjoint(self, f):
        cols, squeeze = _as_columns(f, self.M, "type-3 adjoint")
        if self.exact:
            out = self._dense().conj().T @ cols
        else:
            out = self._adjoint_rows(np.ascontiguousarray(cols.T)).T
        return out[:, 0] if squeeze else out

    def _forward_rows(self, rows):
        out = np.empty((rows.shape[0], self.M), dtype=np.complex128)
        for sl in _batches(rows.shape[0], self._inner.n_grid):
            grid = self._spread_op.spread(rows[sl] * self._pre)
            out[sl] = self._inner._forward_rows(grid) * self._post
        return out

    def _adjoint_rows(self, rows):
        out = np.empty((rows.shape[0], self.N), dtype=np.complex128)
        for sl in _batches(rows.shape[0], self._inner.n_grid):
            grid = self._inner._adjoint_rows(rows[sl] * self._post.conj())
            out[sl] = self._spread_op.interp(grid) * self._pre.conj()
        return out

    def _dense(self):
        return expi2pi_product(self.points[:, None], self.frequencies[None, :])


def nufft_type2_forward(plan: Type2Plan, u):
    return plan.forward(u)


def nufft_type2_adjoint(plan: Type2Plan, f):
    return plan.adjoint(f)


def nufft_type3_forward(plan: Type3Plan, u):
    return plan.forward(u)


def nufft_type3_adjoint(plan: Type3Plan, f):
    return plan.adjoint(f)
