"""Fast direct solvers for inverse nonuniform DFTs.

Type-2 (integer frequencies).  With ``B[j, l] = exp(2*pi*i*x_j*l)`` and the
uniform matrix ``Fp[j, k] = exp(+2*pi*i*j*k/N')``, the product
``At = B Fp^{-1}`` has entries ``(gamma_j^N' - 1) zeta^l / (N' (gamma_j - zeta^l))``
(``gamma_j = exp(2*pi*i*x_j)``, ``zeta = exp(2*pi*i/N')``), a Cauchy-like
matrix that is HSS once rows are ordered by ``x``.  Then
``B = At Fp`` and ``B^+ = Fp^{-1} At^+``, with ``At`` compressed from NUFFT
matvecs and factored by URV.

Type-3 (real frequencies).  ``A = B H`` with ``B`` the type-2 matrix over
columns ``-R..N-1+R`` and ``H = B^+ A`` close to the sinc-like coefficient
matrix.  ``H`` is compressed from products with ``B^+ A`` and
``A^H B^{+H}``, so ``A_fast = B_fast H_hss`` and
``A_fast^+ = H_hss^+ B_fast^+``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.fft

from . import transforms
from .hss import CompressionStats, HssMatrix, blackbox_compress, build_tree
from .problem import NudftProblem, expi2pi_product
from .transforms import Type2Plan, Type3Plan
from .urv import (UrvFactorization, urv_adjoint_solve, urv_apply, urv_apply_adjoint,
                  urv_factorize, urv_solve)

__all__ = [
    "FastType2Solver",
    "FastType3Solver",
    "type2_rank",
    "type3_rank",
    "build_type2",
    "build_type3",
    "type2_apply",
    "type2_apply_adjoint",
    "type2_pinv_apply",
    "type2_pinv_adjoint_apply",
    "type3_apply",
    "type3_apply_adjoint",
    "type3_solve",
    "preconditioner_apply",
]

DEFAULT_LEAF_SIZE = 128
OVERSAMPLING_P = 10
_ORACLE_CHUNK = 32  # columns per piece when chaining oracles over large M


# Measured: the relative error of the compressed type-2 structure falls about
# 100x per 8 extra rank and grows ~0.75 decades per doubling of N'; 0.12 keeps
# it ~100x below rho for N' up to 2**17 and rho in [1e-12, 1e-7].
TYPE2_RANK_CONSTANT = 0.12


def type2_rank(rho: float, n_cols: int) -> int:
    """Rank parameter for the type-2 compression:
    ``max(20, ceil(c * log2(1/rho) * log2(N')))`` with calibrated ``c``."""
    if not 0.0 < rho < 1.0:
        raise ValueError(f"rho must lie in (0, 1), got {rho}")
    return max(20, math.ceil(TYPE2_RANK_CONSTANT * math.log2(1.0 / rho)
                             * math.log2(max(n_cols, 2))))


def type3_rank(N: int) -> int:
    """HSS rank of ``H``: ``ceil(5 * log2 N)``."""
    return max(1, math.ceil(5.0 * math.log2(max(N, 2))))


def _fft(v):
    return scipy.fft.fft(v, axis=0, workers=transforms._FFT_WORKERS)


def _ifft(v):
    return scipy.fft.ifft(v, axis=0, workers=transforms._FFT_WORKERS)


def _cols(a, n, what):
    a = np.asarray(a)
    if a.ndim not in (1, 2) or a.shape[0] != n:
        raise ValueError(f"{what}: expected {n} rows, got shape {a.shape}")
    return a.reshape(n, -1).astype(np.complex128, copy=False), a.ndim == 1


@dataclass
class OracleCounter:
    """Batched oracle invocations and the columns they carried."""

    calls: dict = field(default_factory=dict)
    columns: dict = field(default_factory=dict)

    def add(self, name, ncol):
        self.calls[name] = self.calls.get(name, 0) + 1
        self.columns[name] = self.columns.get(name, 0) + int(ncol)


@dataclass(eq=False)
class FastType2Solver:
    """Fast forward and pseudo-inverse of ``B[j, l] = exp(2*pi*i*x_j*(l + offset))``.

    Rows are processed in the order ``perm`` (sorted by wrapped ``x``); all
    public methods take and return vectors in the caller's order.
    ``A_tilde_hss`` is None when the generators were released after the
    factorization; products then go through the URV factors.
    """

    points: np.ndarray
    n_cols: int
    offset: int
    rho: float
    perm: np.ndarray
    phase: np.ndarray | None
    A_tilde_hss: HssMatrix | None
    urv: UrvFactorization
    rank: int
    samples: int
    nufft_tol: float
    timings: dict
    stats: CompressionStats

    @property
    def M(self) -> int:
        return self.points.size

    def apply(self, u):
        return type2_apply(self, u)

    def apply_adjoint(self, f):
        return type2_apply_adjoint(self, f)

    def pinv(self, f):
        return type2_pinv_apply(self, f)

    def pinv_adjoint(self, u):
        return type2_pinv_adjoint_apply(self, u)


def _row_order(x, n_cols):
    """Sort key placing each point next to the column it is closest to;
    points within half a column of 1 wrap around to column 0."""
    c = np.asarray(x, dtype=np.float64) * n_cols
    c = c - n_cols * np.floor((c + 0.5) / n_cols)
    perm = np.argsort(c, kind="stable")
    return perm, c[perm]


def build_type2(x, n_cols: int, rho: float = 1e-12, offset: int = 0,
                leaf_size: int = DEFAULT_LEAF_SIZE, rank: int | None = None,
                samples: int | None = None, nufft_tol: float | None = None,
                seed: int = 0, spill_bytes: int | None = None,
                keep_hss: bool = True) -> FastType2Solver:
    """Compress and factor the type-2 structure for points ``x``.

    Parameters
    ----------
    x : array_like
        Sample points in [0, 1), ``M >= n_cols`` of them.
    n_cols : int
        Number of integer frequencies ``N'``.
    rho : float
        Accuracy parameter; sets the rank schedule and, unless given, the
        NUFFT tolerance ``rho / 10``.
    offset : int
        Column frequencies are ``l + offset`` (negative for shifted sets).
    leaf_size, rank, samples, seed, spill_bytes
        Passed to the tree builder and the compressor.
    keep_hss : bool
        Keep the HSS generators next to the URV factors.  Dropping them
        saves about a third of the memory at some cost in ``apply`` speed.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    M = x.size
    if M < n_cols or n_cols < 1:
        raise ValueError(f"need M >= N' >= 1, got M={M}, N'={n_cols}")
    if not 0.0 < rho < 1.0:
        raise ValueError(f"rho must lie in (0, 1), got {rho}")
    nufft_tol = rho / 10.0 if nufft_tol is None else nufft_tol
    nufft_tol = min(max(nufft_tol, 2e-15), 0.09)
    r = type2_rank(rho, n_cols) if rank is None else int(rank)
    timings = {}
    t0 = time.perf_counter()
    perm, coords = _row_order(x, n_cols)
    xs = x[perm]
    plan = Type2Plan(xs, n_cols, nufft_tol)
    tree = build_tree(M, n_cols, leaf_size, row_coords=coords)
    inv_n = 1.0 / n_cols
    apply = lambda v: plan.forward(_fft(v) * inv_n)  # noqa: E731
    apply_adj = lambda f: _ifft(plan.adjoint(f))  # noqa: E731
    stats = CompressionStats()
    hss = blackbox_compress(apply, apply_adj, M, n_cols, tree, r, s=samples, seed=seed,
                            spill_bytes=spill_bytes, stats=stats)
    t1 = time.perf_counter()
    fact = urv_factorize(hss, consume=not keep_hss)
    if not keep_hss:
        hss = None
    t2 = time.perf_counter()
    timings["compress"] = t1 - t0
    timings["factorize"] = t2 - t1
    phase = None if offset == 0 else expi2pi_product(x, float(offset))
    x.setflags(write=False)
    return FastType2Solver(x, int(n_cols), int(offset), float(rho), perm, phase, hss, fact,
                           r, stats.samples, nufft_tol, timings, stats)


def type2_apply(s: FastType2Solver, u):
    """``B_fast u = At_hss (Fp u)``."""
    ub, squeeze = _cols(u, s.n_cols, "type2_apply")
    v = _ifft(ub) * s.n_cols
    fs = urv_apply(s.urv, v) if s.A_tilde_hss is None else s.A_tilde_hss.matvec(v)
    f = np.empty_like(fs)
    f[s.perm] = fs
    if s.phase is not None:
        f *= s.phase[:, None]
    return f[:, 0] if squeeze else f


def type2_apply_adjoint(s: FastType2Solver, f):
    """``B_fast^H f``."""
    fb, squeeze = _cols(f, s.M, "type2_apply_adjoint")
    if s.phase is not None:
        fb = fb * s.phase.conj()[:, None]
    fs = fb[s.perm]
    u = _fft(urv_apply_adjoint(s.urv, fs) if s.A_tilde_hss is None else s.A_tilde_hss.rmatvec(fs))
    return u[:, 0] if squeeze else u


def type2_pinv_apply(s: FastType2Solver, f):
    """``B_fast^+ f = Fp^{-1} At_hss^+ f`` (least squares through URV)."""
    fb, squeeze = _cols(f, s.M, "type2_pinv_apply")
    if s.phase is not None:
        fb = fb * s.phase.conj()[:, None]
    u = _fft(urv_solve(s.urv, fb[s.perm])) / s.n_cols
    return u[:, 0] if squeeze else u


def type2_pinv_adjoint_apply(s: FastType2Solver, u):
    """``(B_fast^+)^H u = (At_hss^+)^H Fp^{-H} u``."""
    ub, squeeze = _cols(u, s.n_cols, "type2_pinv_adjoint_apply")
    fs = urv_adjoint_solve(s.urv, _ifft(ub))
    f = np.empty_like(fs)
    f[s.perm] = fs
    if s.phase is not None:
        f *= s.phase[:, None]
    return f[:, 0] if squeeze else f


@dataclass(eq=False)
class FastType3Solver:
    """``A_fast = B_fast H_hss`` for a type-3 problem (see module docstring).

    Columns are handled in the order ``col_perm`` (sorted frequencies).
    """

    problem: NudftProblem
    b_fast: FastType2Solver
    H_hss: HssMatrix | None
    h_urv: UrvFactorization
    R: int
    k: int
    rank: int
    samples: int
    col_perm: np.ndarray
    plan: Type3Plan
    timings: dict
    oracles: OracleCounter
    stats: CompressionStats

    @property
    def M(self) -> int:
        return self.problem.M

    @property
    def N(self) -> int:
        return self.problem.N

    def apply(self, u):
        return type3_apply(self, u)

    def apply_adjoint(self, f):
        return type3_apply_adjoint(self, f)

    def solve(self, f):
        return type3_solve(self, f)

    def precondition(self, v):
        return preconditioner_apply(self, v)

    def forward_exact(self, u):
        """Type-3 NUFFT (not the HSS structure); ``A u``."""
        return self.plan.forward(u)

    def adjoint_exact(self, f):
        return self.plan.adjoint(f)


def build_type3(problem: NudftProblem, rho: float = 1e-12, k: int | None = None,
                R: int = 0, p: int = OVERSAMPLING_P, leaf_size: int = DEFAULT_LEAF_SIZE,
                h_leaf_size: int | None = None, samples: int | None = None,
                nufft_tol: float | None = None, seed: int = 0,
                b_fast: FastType2Solver | None = None, type2_rank_override=None,
                spill_bytes: int | None = None, keep_hss: bool = True) -> FastType3Solver:
    """Build the type-3 direct solver.

    Parameters
    ----------
    problem : NudftProblem
        Points ``x`` and frequencies ``omega``.
    rho : float
        Accuracy parameter of the type-2 part (and NUFFT tolerance ``rho/10``).
    k : int, optional
        HSS rank of ``H``; defaults to ``ceil(5 log2 N)``.  The compression
        uses ``r = k + p``.
    R : int
        Extra columns on each side of the integer frequency range.
    b_fast : FastType2Solver, optional
        Reuse a type-2 solver built for the same points, ``N + 2R`` columns
        and offset ``-R``.
    keep_hss : bool
        Keep the HSS generators of both stages after factorization (see
        :func:`build_type2`).
    """
    M, N = problem.M, problem.N
    if R < 0:
        raise ValueError("R must be nonnegative")
    if M < N + 2 * R:
        raise ValueError(f"need M >= N + 2R = {N + 2 * R}, got M = {M}")
    nufft_tol = rho / 10.0 if nufft_tol is None else nufft_tol
    nufft_tol = min(max(nufft_tol, 2e-15), 0.09)
    k = type3_rank(N) if k is None else int(k)
    r = k + p
    timings = {}
    counter = OracleCounter()
    n_b = N + 2 * R
    t0 = time.perf_counter()
    if b_fast is None:
        b_fast = build_type2(problem.sample_points, n_b, rho, offset=-R, leaf_size=leaf_size,
                             rank=type2_rank_override, nufft_tol=nufft_tol, seed=seed + 1,
                             spill_bytes=spill_bytes, keep_hss=keep_hss)
    elif (b_fast.n_cols != n_b or b_fast.offset != -R
          or not np.array_equal(b_fast.points, problem.sample_points)):
        raise ValueError("b_fast does not match the problem's points, N + 2R or offset")
    timings["type2_compress"] = b_fast.timings["compress"]
    timings["type2_factorize"] = b_fast.timings["factorize"]
    t1 = time.perf_counter()
    col_perm = np.argsort(problem.frequencies, kind="stable")
    omega_sorted = problem.frequencies[col_perm]
    plan = Type3Plan(problem.sample_points, omega_sorted, nufft_tol)
    row_coords = np.arange(n_b, dtype=np.float64) - R
    tree = build_tree(n_b, N, h_leaf_size or leaf_size, row_coords=row_coords)

    def apply(X):
        counter.add("type3_forward", X.shape[1])
        out = np.empty((n_b, X.shape[1]), dtype=np.complex128)
        for c0 in range(0, X.shape[1], _ORACLE_CHUNK):
            sl = slice(c0, min(X.shape[1], c0 + _ORACLE_CHUNK))
            out[:, sl] = type2_pinv_apply(b_fast, plan.forward(X[:, sl]))
            counter.add("type2_pinv", sl.stop - sl.start)
        return out

    def apply_adjoint(Y):
        counter.add("type3_adjoint", Y.shape[1])
        out = np.empty((N, Y.shape[1]), dtype=np.complex128)
        for c0 in range(0, Y.shape[1], _ORACLE_CHUNK):
            sl = slice(c0, min(Y.shape[1], c0 + _ORACLE_CHUNK))
            out[:, sl] = plan.adjoint(type2_pinv_adjoint_apply(b_fast, Y[:, sl]))
            counter.add("type2_pinv_adjoint", sl.stop - sl.start)
        return out

    stats = CompressionStats()
    H = blackbox_compress(apply, apply_adjoint, n_b, N, tree, r, s=samples, seed=seed,
                          spill_bytes=spill_bytes, stats=stats)
    t2 = time.perf_counter()
    h_fact = urv_factorize(H, consume=not keep_hss)
    if not keep_hss:
        H = None
    t3 = time.perf_counter()
    timings["blackbox"] = t2 - t1
    timings["h_factorize"] = t3 - t2
    timings["construction"] = timings["type2_compress"] + timings["blackbox"]
    timings["factorization"] = timings["type2_factorize"] + timings["h_factorize"]
    return FastType3Solver(problem, b_fast, H, h_fact, int(R), k, r, stats.samples, col_perm,
                           plan, timings, counter, stats)


def _unsort_cols(s, u):
    out = np.empty_like(u)
    out[s.col_perm] = u
    return out


def type3_apply(s: FastType3Solver, u):
    """``A_fast u = B_fast (H_hss u)``."""
    ub, squeeze = _cols(u, s.N, "type3_apply")
    v = ub[s.col_perm]
    v = urv_apply(s.h_urv, v) if s.H_hss is None else s.H_hss.matvec(v)
    f = type2_apply(s.b_fast, v)
    return f[:, 0] if squeeze else f


def type3_apply_adjoint(s: FastType3Solver, f):
    """``A_fast^H f``."""
    fb, squeeze = _cols(f, s.M, "type3_apply_adjoint")
    w = type2_apply_adjoint(s.b_fast, fb)
    u = _unsort_cols(s, urv_apply_adjoint(s.h_urv, w) if s.H_hss is None else s.H_hss.rmatvec(w))
    return u[:, 0] if squeeze else u


def type3_solve(s: FastType3Solver, f):
    """``u = H_hss^+ B_fast^+ f``."""
    fb, squeeze = _cols(f, s.M, "type3_solve")
    u = _unsort_cols(s, urv_solve(s.h_urv, type2_pinv_apply(s.b_fast, fb)))
    return u[:, 0] if squeeze else u


def preconditioner_apply(s: FastType3Solver, v):
    """``A_fast^+ (A_fast^+)^H v``, Hermitian positive semidefinite."""
    vb, squeeze = _cols(v, s.N, "preconditioner_apply")
    w = urv_adjoint_solve(s.h_urv, vb[s.col_perm])
    w = type2_pinv_apply(s.b_fast, type2_pinv_adjoint_apply(s.b_fast, w))
    out = _unsort_cols(s, urv_solve(s.h_urv, w))
    return out[:, 0] if squeeze else out
