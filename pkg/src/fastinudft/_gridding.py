"""Backend selection for the gridding kernels.

The compiled extension ``_spread`` is used when it imports; otherwise a
scipy.sparse formulation of the same operators is used.  Setting the
environment variable ``FASTINUDFT_BACKEND=python`` forces the fallback.
"""

from __future__ import annotations

import os

import numpy as np
import scipy.sparse as sp

__all__ = ["BACKEND", "GridOperator", "es_weights_python"]


def es_weights_python(t, width, beta, n):
    """Pure numpy version of the compiled ``es_weights``."""
    t = np.asarray(t, dtype=np.float64)
    start = np.ceil(t - 0.5 * width)
    z = (t[:, None] - (start[:, None] + np.arange(width))) * (2.0 / width)
    z2 = np.maximum(1.0 - z * z, 0.0)
    weights = np.where(z2 > 0.0, np.exp(beta * (np.sqrt(z2) - 1.0)), 0.0)
    return np.mod(start.astype(np.int64), n), weights


_ext = None
if os.environ.get("FASTINUDFT_BACKEND", "").lower() != "python":
    try:
        from . import _spread as _ext  # type: ignore[no-redef]
    except ImportError:  # pragma: no cover - depends on build
        _ext = None

BACKEND = "compiled" if _ext is not None else "python"


class GridOperator:
    """Interpolation ``S`` from an ``n``-periodic grid to ``m`` points, with
    ES-kernel weights, and its transpose (spreading).

    Signals are stacked batch-major: ``s`` grids form an ``(s, n)`` array and
    ``s`` point-value vectors an ``(s, m)`` array.

    Parameters
    ----------
    t : ndarray
        Grid coordinates of the points (point ``j`` sits ``t[j]`` cells from
        the origin; any real value, wrapped periodically).
    n : int
        Grid length.
    width, beta : int, float
        Kernel support (in cells) and shape parameter.
    backend : {"compiled", "python"}, optional
        Defaults to the module-level choice.
    """

    def __init__(self, t, n, width, beta, backend=None):
        backend = BACKEND if backend is None else backend
        if backend == "compiled" and _ext is None:
            raise RuntimeError("compiled gridding backend is not available")
        if backend not in ("compiled", "python"):
            raise ValueError(f"unknown backend {backend!r}")
        if not 1 <= width <= 64:
            raise ValueError("kernel width must lie in [1, 64]")
        t = np.ascontiguousarray(t, dtype=np.float64)
        self.m = t.size
        self.n = int(n)
        self.width = int(width)
        self.backend = backend
        if backend == "compiled":
            self.start = np.empty(self.m, dtype=np.int64)
            self.weights = np.empty((self.m, self.width), dtype=np.float64)
            _ext.es_weights(t, self.width, float(beta), self.n, self.start, self.weights)
            self.order = np.argsort(self.start, kind="stable").astype(np.int64)
            self.start = np.ascontiguousarray(self.start[self.order])
            self.weights = np.ascontiguousarray(self.weights[self.order])
            self._mat = None
        else:
            start, weights = es_weights_python(t, self.width, beta, self.n)
            cols = (start[:, None] + np.arange(self.width)) % self.n
            rows = np.repeat(np.arange(self.m), self.width)
            self._mat = sp.csr_matrix(
                (weights.ravel(), (rows, cols.ravel())), shape=(self.m, self.n)
            )
            self._mat_t = self._mat.T.tocsr()

    def interp(self, grid):
        """``out[:, j] = sum_k w[j, k] grid[:, start[j] + k]``."""
        grid = np.ascontiguousarray(grid, dtype=np.complex128)
        if self._mat is not None:
            return np.ascontiguousarray((self._mat @ grid.T).T)
        out = np.empty((grid.shape[0], self.m), dtype=np.complex128)
        _ext.interp(grid.view(np.float64), self.order, self.start, self.weights,
                    out.view(np.float64))
        return out

    def spread(self, vals):
        """Transpose of :meth:`interp`."""
        vals = np.ascontiguousarray(vals, dtype=np.complex128)
        if self._mat is not None:
            return np.ascontiguousarray((self._mat_t @ vals.T).T)
        out = np.zeros((vals.shape[0], self.n), dtype=np.complex128)
        # gather once so the kernel reads values in grid order
        vs = np.take(vals, self.order, axis=1)
        _ext.spread(vs.view(np.float64), self.start, self.weights, out.view(np.float64))
        return out
