"""Hierarchically semiseparable (HSS) matrices.

Nodes of the full binary cluster tree use heap numbering: the root is node
1 and node ``t`` has children ``2t`` and ``2t+1``.  All leaves sit on the
same level ``L``, so leaves are nodes ``2**L .. 2**(L+1)-1``.

Generators follow the nested-basis convention.  A leaf carries a dense
diagonal block ``D``, a column basis ``U`` (rows x ku) and a row basis ``V``
(cols x kv).  A nonleaf node below the root carries the translation
matrices ``U = [R_1; R_2]`` and ``V = [W_1; W_2]`` expressed in its
children's bases.  Every nonleaf node carries the sibling couplings ``B12``
and ``B21``, so that ``A[I_1, J_2] = Ubig_1 @ B12 @ Vbig_2^H``.
"""

from __future__ import annotations

import io
import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from ._householder import qr_factor
from .problem import make_rng

__all__ = [
    "HssTree",
    "HssMatrix",
    "SampleBundle",
    "CompressionStats",
    "build_tree",
    "hss_matvec",
    "hss_adjoint_matvec",
    "hss_to_dense",
    "nullspace_projector",
    "blackbox_compress",
    "default_samples",
    "default_spill_bytes",
    "random_hss",
    "save_hss",
    "load_hss",
]

DENSE_CAP = 8192
_PIVOT_CUTOFF = 1e-13
_CHUNK = 32  # columns per block when generating or sampling in pieces


# --------------------------------------------------------------------- tree


@dataclass(frozen=True, eq=False)
class HssTree:
    """Cluster tree with contiguous row and column ranges per node.

    ``row_start[t]:row_stop[t]`` is ``I_t`` and ``col_start[t]:col_stop[t]``
    is ``J_t``; entry 0 of each array is unused.
    """

    levels: int
    leaf_size: int
    row_start: np.ndarray
    row_stop: np.ndarray
    col_start: np.ndarray
    col_stop: np.ndarray

    @property
    def n_nodes(self) -> int:
        return (1 << (self.levels + 1)) - 1

    @property
    def M(self) -> int:
        return int(self.row_stop[1])

    @property
    def N(self) -> int:
        return int(self.col_stop[1])

    def leaves(self) -> range:
        return range(1 << self.levels, 1 << (self.levels + 1))

    def level_nodes(self, level: int) -> range:
        return range(1 << level, 1 << (level + 1))

    def is_leaf(self, t: int) -> bool:
        return t >= (1 << self.levels)

    @staticmethod
    def level(t: int) -> int:
        return int(t).bit_length() - 1

    def rows(self, t: int) -> slice:
        return slice(int(self.row_start[t]), int(self.row_stop[t]))

    def cols(self, t: int) -> slice:
        return slice(int(self.col_start[t]), int(self.col_stop[t]))

    def n_rows(self, t: int) -> int:
        return int(self.row_stop[t] - self.row_start[t])

    def n_cols(self, t: int) -> int:
        return int(self.col_stop[t] - self.col_start[t])

    def max_leaf_dim(self) -> int:
        lv = np.arange(1 << self.levels, 1 << (self.levels + 1))
        return int(max(np.max(self.row_stop[lv] - self.row_start[lv]),
                       np.max(self.col_stop[lv] - self.col_start[lv])))


def _split_counts(start, stop):
    return start + (stop - start + 1) // 2


def _tree_bounds(M, N, levels, row_coords):
    size = 1 << (levels + 1)
    rs = np.zeros(size, dtype=np.int64)
    re = np.zeros(size, dtype=np.int64)
    cs = np.zeros(size, dtype=np.int64)
    ce = np.zeros(size, dtype=np.int64)
    re[1], ce[1] = M, N
    for t in range(1, 1 << levels):
        c0, c1, r0, r1 = cs[t], ce[t], rs[t], re[t]
        cm = _split_counts(c0, c1)
        if row_coords is None:
            rm = _split_counts(r0, r1)
        else:
            # rows whose coordinate falls left of the column split go left
            rm = r0 + int(np.searchsorted(row_coords[r0:r1], cm - 0.5))
        cs[2 * t], ce[2 * t], cs[2 * t + 1], ce[2 * t + 1] = c0, cm, cm, c1
        rs[2 * t], re[2 * t], rs[2 * t + 1], re[2 * t + 1] = r0, rm, rm, r1
    return rs, re, cs, ce


def build_tree(M: int, N: int, leaf_size: int, row_coords=None) -> HssTree:
    """Uniform-depth cluster tree for an ``M x N`` matrix.

    Column ranges are halved at every level.  Row ranges are halved too,
    unless ``row_coords`` (sorted, one per row, on the column index scale)
    is given: rows are then split where their coordinate crosses the column
    split, so each diagonal block pairs nearby rows and columns.  The depth
    is the smallest one whose leaves have at most ``leaf_size`` rows and
    columns (column ranges never drop below one index).

    Parameters
    ----------
    M, N : int
        Matrix shape.
    leaf_size : int
        Target leaf dimension.
    row_coords : array_like, optional
        Sorted row coordinates for geometric row splitting.  Falls back to
        count halving if a geometric split would leave a node without rows.
    """
    if M < 1 or N < 1 or leaf_size < 1:
        raise ValueError("need M, N, leaf_size >= 1")
    if row_coords is not None:
        row_coords = np.asarray(row_coords, dtype=np.float64)
        if row_coords.shape != (M,):
            raise ValueError("row_coords must have one entry per row")
        if np.any(np.diff(row_coords) < 0):
            raise ValueError("row_coords must be sorted")
    levels = 0
    while True:
        bounds = _tree_bounds(M, N, levels, row_coords)
        rs, re, cs, ce = bounds
        lv = np.arange(1 << levels, 1 << (levels + 1))
        if row_coords is not None and np.any(re[1:] - rs[1:] < 1):
            return build_tree(M, N, leaf_size)
        fits = np.max(re[lv] - rs[lv]) <= leaf_size and np.max(ce[lv] - cs[lv]) <= leaf_size
        can_split = (N >> (levels + 1)) >= 1 and (M >> (levels + 1)) >= 1
        if fits or not can_split:
            break
        levels += 1
    for arr in bounds:
        arr.setflags(write=False)
    return HssTree(levels, int(leaf_size), *bounds)


# ------------------------------------------------------------------- matrix


@dataclass(eq=False)
class HssMatrix:
    """HSS generators on a cluster tree (see module docstring).

    Lists are indexed by node id; unused entries are None.
    """

    tree: HssTree
    U: list
    V: list
    D: list
    B12: list
    B21: list

    @property
    def shape(self):
        return (self.tree.M, self.tree.N)

    def ku(self, t: int) -> int:
        return self.U[t].shape[1]

    def kv(self, t: int) -> int:
        return self.V[t].shape[1]

    def max_rank(self) -> int:
        ks = [u.shape[1] for u in self.U if u is not None]
        ks += [v.shape[1] for v in self.V if v is not None]
        return max(ks, default=0)

    def nbytes(self) -> int:
        return sum(a.nbytes for group in (self.U, self.V, self.D, self.B12, self.B21)
                   for a in group if a is not None)

    def matvec(self, v):
        return hss_matvec(self, v)

    def rmatvec(self, f):
        return hss_adjoint_matvec(self, f)

    def to_dense(self, cap=DENSE_CAP):
        return hss_to_dense(self, cap)


def _empty_generators(tree):
    n = tree.n_nodes + 1
    return [None] * n, [None] * n, [None] * n, [None] * n, [None] * n


def _telescoping_apply(tree, U, V, D, B12, B21, v):
    """Shared upward/sibling/downward passes; ``v`` has N rows (batched)."""
    L = tree.levels
    out = np.zeros((tree.M, v.shape[1]), dtype=np.result_type(v, np.complex128))
    if L == 0:
        out[:] = D[1] @ v
        return out
    proj = [None] * (tree.n_nodes + 1)
    for t in tree.leaves():
        proj[t] = V[t].conj().T @ v[tree.cols(t)]
    for t in range((1 << L) - 1, 1, -1):
        proj[t] = V[t].conj().T @ np.vstack((proj[2 * t], proj[2 * t + 1]))
    g = [None] * (tree.n_nodes + 1)
    for t in range(1, 1 << L):
        a1, a2 = 2 * t, 2 * t + 1
        g1 = B12[t] @ proj[a2]
        g2 = B21[t] @ proj[a1]
        if t > 1:
            inherited = U[t] @ g[t]
            k1 = U[a1].shape[1]
            g1 += inherited[:k1]
            g2 += inherited[k1:]
        g[a1], g[a2] = g1, g2
        g[t] = None
    for t in tree.leaves():
        out[tree.rows(t)] = U[t] @ g[t] + D[t] @ v[tree.cols(t)]
    return out


def _as_block(v, n, what):
    v = np.asarray(v)
    if v.ndim not in (1, 2) or v.shape[0] != n:
        raise ValueError(f"{what}: expected {n} rows, got shape {v.shape}")
    return v.reshape(n, -1), v.ndim == 1


def hss_matvec(A: HssMatrix, v):
    """``A @ v`` by the telescoping factorization; ``v`` may hold columns."""
    cols, squeeze = _as_block(v, A.tree.N, "hss_matvec")
    out = _telescoping_apply(A.tree, A.U, A.V, A.D, A.B12, A.B21, cols)
    return out[:, 0] if squeeze else out


def _transposed_tree(tree):
    return HssTree(tree.levels, tree.leaf_size, tree.col_start, tree.col_stop,
                   tree.row_start, tree.row_stop)


def hss_adjoint_matvec(A: HssMatrix, f):
    """``A^H @ f`` through the transposed telescoping passes."""
    cols, squeeze = _as_block(f, A.tree.M, "hss_adjoint_matvec")
    herm = lambda xs: [None if x is None else x.conj().T for x in xs]  # noqa: E731
    out = _telescoping_apply(
        _transposed_tree(A.tree), A.V, A.U, herm(A.D), herm(A.B21), herm(A.B12), cols
    )
    return out[:, 0] if squeeze else out


def hss_to_dense(A: HssMatrix, cap: int = DENSE_CAP) -> np.ndarray:
    """Dense reconstruction from the nested-basis recursion.

    Raises ValueError when either dimension exceeds ``cap``.
    """
    tree = A.tree
    if max(tree.M, tree.N) > cap:
        raise ValueError(f"dense reconstruction of {tree.M}x{tree.N} exceeds cap {cap}")
    out = np.zeros((tree.M, tree.N), dtype=np.complex128)
    L = tree.levels
    ubig = [None] * (tree.n_nodes + 1)
    vbig = [None] * (tree.n_nodes + 1)
    for t in tree.leaves():
        out[tree.rows(t), tree.cols(t)] = A.D[t]
        if L > 0:
            ubig[t], vbig[t] = A.U[t], A.V[t]
    for t in range((1 << L) - 1, 0, -1):
        a1, a2 = 2 * t, 2 * t + 1
        out[tree.rows(a1), tree.cols(a2)] = ubig[a1] @ A.B12[t] @ vbig[a2].conj().T
        out[tree.rows(a2), tree.cols(a1)] = ubig[a2] @ A.B21[t] @ vbig[a1].conj().T
        if t > 1:
            k1u, k1v = ubig[a1].shape[1], vbig[a1].shape[1]
            ubig[t] = np.vstack((ubig[a1] @ A.U[t][:k1u], ubig[a2] @ A.U[t][k1u:]))
            vbig[t] = np.vstack((vbig[a1] @ A.V[t][:k1v], vbig[a2] @ A.V[t][k1v:]))
        ubig[a1] = ubig[a2] = vbig[a1] = vbig[a2] = None
    return out


def _random_orthonormal(rng, m, k):
    k = min(k, m)
    G = rng.standard_normal((m, k)) + 1j * rng.standard_normal((m, k))
    return np.linalg.qr(G)[0]


def random_hss(tree: HssTree, rank: int, seed=0, diag_scale=1.0) -> HssMatrix:
    """Random HSS matrix with orthonormal bases of rank ``min(rank, dims)``.

    Useful as an exactly-HSS test input.
    """
    rng = make_rng(seed)
    U, V, D, B12, B21 = _empty_generators(tree)
    L = tree.levels
    for t in tree.leaves():
        m, n = tree.n_rows(t), tree.n_cols(t)
        D[t] = diag_scale * (rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n)))
        if L > 0:
            U[t] = _random_orthonormal(rng, m, rank)
            V[t] = _random_orthonormal(rng, n, rank)
    for t in range((1 << L) - 1, 0, -1):
        a1, a2 = 2 * t, 2 * t + 1
        B12[t] = rng.standard_normal((U[a1].shape[1], V[a2].shape[1])) + 0j
        B21[t] = rng.standard_normal((U[a2].shape[1], V[a1].shape[1])) + 0j
        if t > 1:
            U[t] = _random_orthonormal(rng, U[a1].shape[1] + U[a2].shape[1], rank)
            V[t] = _random_orthonormal(rng, V[a1].shape[1] + V[a2].shape[1], rank)
    return HssMatrix(tree, U, V, D, B12, B21)


# -------------------------------------------------------------- compression


def nullspace_projector(Omega_tau, r: int) -> np.ndarray:
    """Orthonormal ``P`` (s x r) with ``Omega_tau @ P = 0``.

    Taken as the last ``r`` columns of ``Q`` in a column-pivoted QR of
    ``Omega_tau^H``.  Requires ``s >= rows(Omega_tau) + r``.
    """
    Om = np.asarray(Omega_tau, dtype=np.complex128)
    sp_, s = Om.shape
    if r < 0 or s < sp_ + r:
        raise ValueError(f"need s >= {sp_} + r = {sp_ + r} columns, got s = {s}")
    return qr_factor(Om.conj().T, pivoting=True).q_columns(s - r, s)


class _WideFactor:
    """QRCP of ``Om^H`` for a wide ``Om`` (n x s): null-space basis and the
    right pseudo-inverse ``X @ Om^+``."""

    def __init__(self, Om):
        self.Om = Om
        self.n, self.s = Om.shape
        self.qr = qr_factor(Om.conj().T, pivoting=True)
        d = self.qr.diag_abs()
        self.full_rank = d.size == 0 or d[-1] > _PIVOT_CUTOFF * d[0]

    def null_basis(self, r):
        if self.s < self.n + r:
            raise ValueError(f"need s >= {self.n + r} samples, got s = {self.s}")
        return self.qr.q_columns(self.s - r, self.s)

    def solve_right(self, X):
        """Minimum-norm ``W`` with ``W @ Om ~= X`` (i.e. ``X @ pinv(Om)``)."""
        if self.n == 0:
            return np.zeros((X.shape[0], 0), dtype=np.complex128)
        if not self.full_rank:
            return sla.lstsq(self.Om.T, X.T)[0].T
        # Om^H P = Q R  =>  pinv(Om) = Q[:, :n] R^{-H} P^T
        XQ = self.qr.apply_qh(X.conj().T)[: self.n].conj().T
        W = sla.solve_triangular(self.qr.R[:, : self.n], XQ.conj().T, lower=False).conj().T
        out = np.empty_like(W)
        out[:, self.qr.perm] = W
        return out


def _range_basis(S, k_max, tol):
    """First columns of ``Q`` from a pivoted QR of ``S`` (m x r)."""
    m = S.shape[0]
    if m <= k_max and tol is None:
        return np.eye(m, dtype=np.complex128)
    Q, R, _ = sla.qr(S, mode="economic", pivoting=True)
    k = min(k_max, m, S.shape[1])
    if tol is not None:
        d = np.abs(np.diag(R))
        k = int(np.count_nonzero(d > tol * d[0])) if d.size and d[0] > 0 else 0
        k = min(k, k_max)
    return np.ascontiguousarray(Q[:, :k])


@dataclass
class SampleBundle:
    """Test matrices and samples: ``Y = A @ Omega`` and ``Z = A^H @ Psi``."""

    Omega: np.ndarray
    Y: np.ndarray
    Psi: np.ndarray
    Z: np.ndarray

    @property
    def s(self) -> int:
        return self.Omega.shape[1]


@dataclass
class CompressionStats:
    forward_calls: int = 0
    adjoint_calls: int = 0
    forward_columns: int = 0
    adjoint_columns: int = 0
    samples: int = 0
    rank: int = 0
    spilled: bool = False
    max_null_residual: float = 0.0
    extra: dict = field(default_factory=dict)


def _gaussian(rng, rows, s, out=None):
    """Complex Gaussian matrix (variance 1/2 per part), drawn in fixed column
    chunks so the values do not depend on the storage mode."""
    if out is None:
        out = np.empty((rows, s), dtype=np.complex128)
    for c0 in range(0, s, _CHUNK):
        c1 = min(s, c0 + _CHUNK)
        re = rng.standard_normal((rows, c1 - c0))
        im = rng.standard_normal((rows, c1 - c0))
        out[:, c0:c1] = (re + 1j * im) * np.sqrt(0.5)
    return out


def _alloc(rows, cols, spill_dir, spill):
    if not spill:
        return np.empty((rows, cols), dtype=np.complex128), None
    fd, path = tempfile.mkstemp(suffix=".samples", dir=spill_dir)
    os.close(fd)
    arr = np.memmap(path, dtype=np.complex128, mode="w+", shape=(rows, cols))
    return arr, path


def _sample(apply, X, out, n_out, what):
    """One batched oracle application; large inputs are fed in column chunks
    written straight into ``out``."""
    if isinstance(out, np.memmap):
        for c0 in range(0, X.shape[1], _CHUNK):
            c1 = min(X.shape[1], c0 + _CHUNK)
            block = np.asarray(apply(np.ascontiguousarray(X[:, c0:c1])))
            if block.shape != (n_out, c1 - c0):
                raise ValueError(f"{what} oracle returned shape {block.shape}")
            out[:, c0:c1] = block
        return out
    res = np.asarray(apply(X))
    if res.shape != (n_out, X.shape[1]):
        raise ValueError(f"{what} oracle returned shape {res.shape}, expected {(n_out, X.shape[1])}")
    out[:] = res
    return out


def default_spill_bytes() -> int:
    """Per-array spill threshold: 1/24 of physical memory, capped at 1 GiB."""
    try:
        phys = os.sysconf("SC_PAGE_SIZE") * os.sysconf("SC_PHYS_PAGES")
    except (ValueError, OSError, AttributeError):
        return 1 << 30
    return int(min(1 << 30, phys // 24))


def default_samples(tree: HssTree, r: int, tol=None) -> int:
    """Smallest admissible sample count.

    A leaf side is compressed through the null space of the opposite test
    matrix block, so ``s >= r + (that block's height)``; sides no larger
    than ``r`` keep the identity basis and impose nothing (fixed-rank mode
    only).  Nonleaf nodes need ``3r``.
    """
    if tol is not None:
        return max(r + tree.max_leaf_dim(), 3 * r)
    need = 3 * r
    for t in tree.leaves():
        m, n = tree.n_rows(t), tree.n_cols(t)
        if m > r:
            need = max(need, n + r)
        if n > r:
            need = max(need, m + r)
    return need


def blackbox_compress(apply, apply_adjoint, M, N, tree: HssTree, r: int, s=None,
                      seed=0, tol=None, spill_bytes=None, spill_dir=None,
                      stats: CompressionStats | None = None,
                      check_null=False) -> HssMatrix:
    """Randomized HSS compression from matrix-vector products only.

    Parameters
    ----------
    apply, apply_adjoint : callable
        ``apply(X)`` returns ``A @ X`` for an ``N x s`` block and
        ``apply_adjoint(Y)`` returns ``A^H @ Y`` for an ``M x s`` block.
        Each is invoked once with all ``s`` test vectors.
    M, N : int
        Shape of ``A``.
    tree : HssTree
        Cluster tree matching the shape.
    r : int
        Rank parameter; node ranks are ``min(r, block dimension)``.
    s : int, optional
        Number of samples.  Defaults to :func:`default_samples`; smaller
        values are rejected.
    seed : int, optional
        Seed for the Gaussian test matrices.
    tol : float, optional
        If given, node ranks are truncated where the pivoted-QR diagonal drops
        below ``tol`` times its leading entry (still capped by ``r``).
    spill_bytes : int, optional
        Sample matrices larger than this (default :func:`default_spill_bytes`)
        are kept in a temporary memory-mapped file rather than RAM.
    stats : CompressionStats, optional
        Filled with oracle-call and sampling counters.
    check_null : bool, optional
        Record ``max ||Omega_t P_t||`` over nodes in ``stats``.

    Returns
    -------
    HssMatrix
    """
    if tree.M != M or tree.N != N:
        raise ValueError(f"tree is {tree.M}x{tree.N} but matrix is {M}x{N}")
    if r < 1:
        raise ValueError("rank parameter must be positive")
    s_min = default_samples(tree, r, tol)
    s = s_min if s is None else int(s)
    if s < s_min:
        raise ValueError(f"need at least {s_min} samples, got s = {s}")
    stats = CompressionStats() if stats is None else stats
    stats.samples, stats.rank = s, r
    if spill_bytes is None:
        spill_bytes = default_spill_bytes()
    spill = max(M, N) * s * 16 > spill_bytes
    stats.spilled = spill
    rng = make_rng(seed)
    paths = []
    try:
        Omega = _gaussian(rng, N, s)
        Psi, p = _alloc(M, s, spill_dir, spill)
        paths.append(p)
        _gaussian(rng, M, s, Psi)
        Y, p = _alloc(M, s, spill_dir, spill)
        paths.append(p)
        _sample(apply, Omega, Y, M, "forward")
        stats.forward_calls += 1
        stats.forward_columns += s
        Z = np.empty((N, s), dtype=np.complex128)
        _sample(apply_adjoint, Psi, Z, N, "adjoint")
        stats.adjoint_calls += 1
        stats.adjoint_columns += s
        return _compress_from_samples(tree, r, tol, Omega, Y, Psi, Z, stats, check_null)
    finally:
        for p in paths:
            if p is not None:
                try:
                    os.remove(p)
                except OSError:
                    pass


def compress_from_samples(bundle: SampleBundle, tree: HssTree, r: int, tol=None) -> HssMatrix:
    """Run the compression on precomputed samples."""
    return _compress_from_samples(tree, r, tol, bundle.Omega, bundle.Y, bundle.Psi,
                                  bundle.Z, CompressionStats(), False)


def _compress_from_samples(tree, r, tol, Omega, Y, Psi, Z, stats, check_null):
    L = tree.levels
    n = tree.n_nodes + 1
    U, V, D, B12, B21 = _empty_generators(tree)
    dcheck = [None] * n
    # per-node reduced samples handed to the parent
    Om_, Y_, Ps_, Z_ = [None] * n, [None] * n, [None] * n, [None] * n
    for t in range(tree.n_nodes, 0, -1):
        if tree.is_leaf(t):
            # sliced on demand so a memory-mapped Y/Psi is never copied whole
            Om_[t] = Omega[tree.cols(t)]
            Z_[t] = Z[tree.cols(t)]
            Y_[t] = np.array(Y[tree.rows(t)])
            Ps_[t] = np.array(Psi[tree.rows(t)])
        else:
            a1, a2 = 2 * t, 2 * t + 1
            Om_[t] = np.vstack((Om_[a1], Om_[a2]))
            Y_[t] = np.vstack((Y_[a1], Y_[a2]))
            Ps_[t] = np.vstack((Ps_[a1], Ps_[a2]))
            Z_[t] = np.vstack((Z_[a1], Z_[a2]))
            Om_[a1] = Om_[a2] = Y_[a1] = Y_[a2] = Ps_[a1] = Ps_[a2] = Z_[a1] = Z_[a2] = None
        Om, Yt, Ps, Zt = Om_[t], Y_[t], Ps_[t], Z_[t]
        if t == 1:
            dcheck[1] = _WideFactor(Om).solve_right(Yt)
            break
        m, nn = Yt.shape[0], Zt.shape[0]
        # a block no taller than r keeps the identity basis; then the sample
        # side that would compress it is not needed at all
        if m <= r and tol is None:
            Ut, X = np.eye(m, dtype=np.complex128), None
        else:
            fo = _WideFactor(Om)
            P = fo.null_basis(r)
            if check_null:
                stats.max_null_residual = max(stats.max_null_residual, float(np.linalg.norm(Om @ P)))
            Ut = _range_basis(Yt @ P, r, tol)
            X = fo.solve_right(Yt)
        if nn <= r and tol is None:
            Vt, W = np.eye(nn, dtype=np.complex128), None
        else:
            fp = _WideFactor(Ps)
            Pt = fp.null_basis(r)
            if check_null:
                stats.max_null_residual = max(stats.max_null_residual, float(np.linalg.norm(Ps @ Pt)))
            Vt = _range_basis(Zt @ Pt, r, tol)
            W = fp.solve_right(Zt)
        # D = (I - U U^H) X + U U^H ((I - V V^H) W)^H
        Dt = np.zeros((m, nn), dtype=np.complex128)
        if X is not None:
            Dt += X - Ut @ (Ut.conj().T @ X)
        if W is not None:
            T = W - Vt @ (Vt.conj().T @ W)
            Dt += Ut @ (Ut.conj().T @ T.conj().T)
        U[t], V[t], dcheck[t] = Ut, Vt, Dt
        Y_[t] = Ut.conj().T @ (Yt - Dt @ Om)
        Z_[t] = Vt.conj().T @ (Zt - Dt.conj().T @ Ps)
        Om_[t] = Vt.conj().T @ Om
        Ps_[t] = Ut.conj().T @ Ps
    # push the diagonal parts down
    for t in range(1, 1 << L):
        a1, a2 = 2 * t, 2 * t + 1
        Dt = dcheck[t]
        ku1, kv1 = U[a1].shape[1], V[a1].shape[1]
        B12[t] = np.ascontiguousarray(Dt[:ku1, kv1:])
        B21[t] = np.ascontiguousarray(Dt[ku1:, :kv1])
        dcheck[a1] = dcheck[a1] + U[a1] @ Dt[:ku1, :kv1] @ V[a1].conj().T
        dcheck[a2] = dcheck[a2] + U[a2] @ Dt[ku1:, kv1:] @ V[a2].conj().T
        dcheck[t] = None
    for t in tree.leaves():
        D[t] = dcheck[t]
    return HssMatrix(tree, U, V, D, B12, B21)


# ------------------------------------------------------------ serialization

_MAGIC = b"HSSM"
_VERSION = 1


def _write_mat(buf, a):
    if a is None:
        buf.write(struct.pack("<BQQ", 0, 0, 0))
        return
    a = np.ascontiguousarray(a, dtype="<c16")
    buf.write(struct.pack("<BQQ", 1, a.shape[0], a.shape[1]))
    buf.write(a.tobytes())


def _read_mat(buf):
    present, m, n = struct.unpack("<BQQ", buf.read(17))
    if not present:
        return None
    data = buf.read(16 * m * n)
    if len(data) != 16 * m * n:
        raise ValueError("truncated HSS payload")
    return np.frombuffer(data, dtype="<c16").reshape(m, n).astype(np.complex128)


def hss_to_bytes(A: HssMatrix) -> bytes:
    """Little-endian, versioned binary encoding: header, node table, then the
    generator payload per node (U, V, D, B12, B21)."""
    tree = A.tree
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<IQQII", _VERSION, tree.M, tree.N, tree.levels, tree.leaf_size))
    for arr in (tree.row_start, tree.row_stop, tree.col_start, tree.col_stop):
        buf.write(np.ascontiguousarray(arr, dtype="<i8").tobytes())
    for t in range(1, tree.n_nodes + 1):
        for group in (A.U, A.V, A.D, A.B12, A.B21):
            _write_mat(buf, group[t])
    return buf.getvalue()


def hss_from_bytes(data: bytes) -> HssMatrix:
    buf = io.BytesIO(data)
    if buf.read(4) != _MAGIC:
        raise ValueError("not an HSS matrix file")
    version, M, N, levels, leaf_size = struct.unpack("<IQQII", buf.read(28))
    if version != _VERSION:
        raise ValueError(f"unsupported HSS file version {version}")
    size = 1 << (levels + 1)
    arrs = []
    for _ in range(4):
        a = np.frombuffer(buf.read(8 * size), dtype="<i8").astype(np.int64)
        a.setflags(write=False)
        arrs.append(a)
    tree = HssTree(levels, leaf_size, *arrs)
    if tree.M != M or tree.N != N:
        raise ValueError("inconsistent HSS header")
    U, V, D, B12, B21 = _empty_generators(tree)
    for t in range(1, tree.n_nodes + 1):
        for group in (U, V, D, B12, B21):
            group[t] = _read_mat(buf)
    return HssMatrix(tree, U, V, D, B12, B21)


def save_hss(A: HssMatrix, path) -> None:
    with open(path, "wb") as fh:
        fh.write(hss_to_bytes(A))


def load_hss(path) -> HssMatrix:
    with open(path, "rb") as fh:
        return hss_from_bytes(fh.read())
