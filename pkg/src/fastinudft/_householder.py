"""Compact Householder QR factors applied through LAPACK ``zunmqr``.

Storing reflectors instead of explicit unitary matrices keeps memory at
O(m*n) for an m x n factorization and lets ``Q`` or ``Q^H`` be applied to a
block of vectors in O(m*n*ncol) work.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla
from scipy.linalg import lapack

__all__ = ["HouseholderQR", "qr_factor"]


class HouseholderQR:
    """``A[:, perm] = Q R`` with ``Q`` (m x m unitary) held as reflectors.

    Attributes
    ----------
    m, n : int
        Shape of the factored matrix.
    R : ndarray
        ``min(m, n) x n`` upper trapezoidal factor, read off the reflector
        storage on access (not stored twice).
    perm : ndarray or None
        Column permutation (None when unpivoted).
    """

    __slots__ = ("m", "n", "_h", "_tau", "perm")

    def __init__(self, h, tau, perm):
        self.m, self.n = h.shape
        self._h = h
        self._tau = tau
        self.perm = perm

    @property
    def R(self):
        return np.triu(self._h[: min(self.m, self.n)])

    def _apply(self, C, side, trans):
        if self._tau.size == 0:
            return np.array(C, dtype=np.complex128, order="F", copy=True)
        C = np.array(C, dtype=np.complex128, order="F", copy=True)
        if C.size == 0:
            return C
        # a blocked workspace of 64 per row/column is what LAPACK asks for anyway
        lwork = 64 * max(C.shape[0], C.shape[1], 1)
        cq, _, info = lapack.zunmqr(side, trans, self._h, self._tau, C, lwork, overwrite_c=1)
        if info != 0:
            raise RuntimeError(f"zunmqr failed with info={info}")
        return cq

    def apply_q(self, C):
        """``Q @ C`` for ``C`` with ``m`` rows."""
        return self._apply(C, "L", "N")

    def apply_qh(self, C):
        """``Q^H @ C`` for ``C`` with ``m`` rows."""
        return self._apply(C, "L", "C")

    def right_apply_q(self, C):
        """``C @ Q`` for ``C`` with ``m`` columns."""
        return self._apply(C, "R", "N")

    def q_columns(self, start, stop):
        """Explicit columns ``Q[:, start:stop]``."""
        E = np.zeros((self.m, stop - start), dtype=np.complex128)
        E[np.arange(start, stop), np.arange(stop - start)] = 1.0
        return self.apply_q(E)

    def diag_abs(self):
        return np.abs(np.diag(self.R))


def qr_factor(A, pivoting=False) -> HouseholderQR:
    """Householder QR (optionally column pivoted) of a complex matrix."""
    A = np.asarray(A, dtype=np.complex128)
    m, n = A.shape
    if m == 0 or n == 0:
        return HouseholderQR(
            np.zeros((m, 0), dtype=np.complex128, order="F"),
            np.zeros(0, dtype=np.complex128),
            np.arange(n) if pivoting else None,
        )
    if pivoting:
        (h, tau), _, perm = sla.qr(A, mode="raw", pivoting=True)
    else:
        (h, tau), _ = sla.qr(A, mode="raw")
        perm = None
    return HouseholderQR(np.asfortranarray(h), tau, perm)
