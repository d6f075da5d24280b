"""URV factorization of (possibly tall) HSS matrices and least-squares solves.

Per node, bottom-up:

1. optional size reduction ``[U D] = Omega [Uc Dc; 0]`` when the node has
   many more rows than ``cols + rank``;
2. a reverse QR ``V = Q [0; V2]`` so that the first ``c = cols - kv`` columns
   of ``Q^H u`` no longer couple to the rest of the matrix;
3. a QR of the leading ``c`` columns of ``Dc Q``, ``P [D11; 0]``, which
   splits the rows into an eliminated part and a remainder;
4. the remainders of two siblings form the parent's ``D``, ``U`` and ``V``.

The root block is finished with a plain QR.  Unitaries are kept as
Householder reflectors and applied on demand.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from ._householder import HouseholderQR, qr_factor
from .hss import HssMatrix

__all__ = [
    "UrvFactorization",
    "RankDeficiencyError",
    "urv_factorize",
    "urv_solve",
    "urv_adjoint_solve",
    "urv_apply",
    "urv_apply_adjoint",
    "urv_to_dense",
]

SIZE_REDUCTION_SLACK = 16
SIZE_REDUCTION_RATIO = 2.0  # reduce only when it at least halves the rows
RANK_TOL = 1e-14


class RankDeficiencyError(np.linalg.LinAlgError):
    """A triangular factor has a (numerically) zero diagonal entry."""

    def __init__(self, node, ratio):
        self.node = node
        self.ratio = ratio
        super().__init__(
            f"rank-deficient triangular factor at node {node} "
            f"(|diag| ratio {ratio:.2e} < {RANK_TOL:g})"
        )


@dataclass(eq=False)
class _NodeFactor:
    m: int  # rows entering the node
    n: int  # columns entering the node
    ku: int
    kv: int
    omega: HouseholderQR | None  # size reduction, None if skipped
    m_red: int  # rows kept after size reduction
    qv: HouseholderQR | None  # QR of V (the reverse QR up to a block swap)
    c: int  # eliminated columns
    p: HouseholderQR  # QR of the leading c columns of the rotated D
    D11: np.ndarray
    D12: np.ndarray
    U1: np.ndarray
    # coupling to the sibling pair below (nonleaf only)
    C12: np.ndarray | None = None
    C21: np.ndarray | None = None
    R1: np.ndarray | None = None  # translation rows of the children's U
    R2: np.ndarray | None = None


@dataclass(eq=False)
class UrvFactorization:
    """Per-node URV factors of an HSS matrix (heap-numbered like the tree)."""

    shape: tuple
    tree: object
    nodes: list
    size_reduced: list = field(default_factory=list)
    deficient: list = field(default_factory=list)
    min_diag_ratio: float = 1.0

    def solve(self, f):
        return urv_solve(self, f)

    def solve_adjoint(self, v):
        return urv_adjoint_solve(self, v)


def _swap_q_apply(qv, kv, x):
    """``Q x`` with ``Q = Q0 * swap`` so that ``V = Q [0; V2]``: the input
    blocks ``[x1 (c); x2 (kv)]`` are reordered to ``[x2; x1]`` before Q0."""
    if qv is None:
        return x
    return qv.apply_q(np.vstack((x[x.shape[0] - kv:], x[: x.shape[0] - kv])))


def _swap_qh_apply(qv, kv, y):
    """``Q^H y``, inverse of :func:`_swap_q_apply`."""
    if qv is None:
        return y
    z = qv.apply_qh(y)
    return np.vstack((z[kv:], z[:kv]))


def _eliminate(t, D, U, V, allow_reduce):
    """Steps 1-3 for one node; returns the factor and the remainders."""
    m, n = D.shape
    ku = 0 if U is None else U.shape[1]
    kv = 0 if V is None else V.shape[1]
    omega = None
    if allow_reduce and m > n + ku + SIZE_REDUCTION_SLACK and m >= SIZE_REDUCTION_RATIO * (n + ku):
        stacked = np.hstack((U, D)) if ku else D
        omega = qr_factor(stacked)
        m_red = ku + n
        Rr = np.triu(omega.R[:m_red])
        Uc, Dc = Rr[:, :ku], Rr[:, ku:]
    else:
        m_red = m
        Uc, Dc = (U if ku else np.zeros((m, 0), dtype=np.complex128)), D
    if kv and kv < n:
        qv = qr_factor(V)
        V2 = np.triu(qv.R[:kv])
        DQ = qv.right_apply_q(Dc)
        Dt = np.hstack((DQ[:, kv:], DQ[:, :kv]))
    elif kv == n and kv:
        qv = None
        V2 = V
        Dt = Dc
    else:
        qv = None
        V2 = np.zeros((n, 0), dtype=np.complex128)
        Dt = Dc
    c = n - kv
    if c > m_red:
        raise RankDeficiencyError(t, 0.0)
    p = qr_factor(Dt[:, :c])
    rest = p.apply_qh(np.hstack((Dt[:, c:], Uc)))
    D11 = np.triu(p.R[:c, :c]) if c else np.zeros((0, 0), dtype=np.complex128)
    # copies, so the stored blocks do not pin the whole ``rest`` array
    D12, U1 = rest[:c, :kv].copy(), rest[:c, kv:].copy()
    D22, U2 = rest[c:, :kv], rest[c:, kv:]
    fac = _NodeFactor(m, n, ku, kv, omega, m_red, qv, c, p, D11, D12, U1)
    return fac, D22, U2, V2


def urv_factorize(A: HssMatrix, consume: bool = False) -> UrvFactorization:
    """Bottom-up URV elimination of an HSS matrix.

    Rank deficiency does not stop the factorization; it is recorded and
    reported by the solves.  With ``consume=True`` the generators of ``A``
    are released node by node (``A`` is unusable afterwards), which roughly
    halves the peak memory of large factorizations.
    """
    tree = A.tree
    L = tree.levels
    nodes = [None] * (tree.n_nodes + 1)
    D22 = [None] * (tree.n_nodes + 1)
    U2 = [None] * (tree.n_nodes + 1)
    V2 = [None] * (tree.n_nodes + 1)
    reduced = []
    for t in range(tree.n_nodes, 0, -1):
        if tree.is_leaf(t):
            D = A.D[t]
            U, V = (A.U[t], A.V[t]) if t > 1 else (None, None)
            if D.shape != (tree.n_rows(t), tree.n_cols(t)):
                raise ValueError(f"leaf {t}: D has shape {D.shape}")
        else:
            a1, a2 = 2 * t, 2 * t + 1
            B12, B21 = A.B12[t], A.B21[t]
            C12 = B12 @ V2[a2].conj().T
            C21 = B21 @ V2[a1].conj().T
            D = np.block([[D22[a1], U2[a1] @ C12], [U2[a2] @ C21, D22[a2]]])
            if t > 1:
                ku1, kv1 = nodes[a1].ku, nodes[a1].kv
                R1, R2 = A.U[t][:ku1], A.U[t][ku1:]
                W1, W2 = A.V[t][:kv1], A.V[t][kv1:]
                U = np.vstack((U2[a1] @ R1, U2[a2] @ R2))
                V = np.vstack((V2[a1] @ W1, V2[a2] @ W2))
            else:
                R1 = R2 = None
                U = V = None
            D22[a1] = D22[a2] = U2[a1] = U2[a2] = V2[a1] = V2[a2] = None
        fac, D22[t], U2[t], V2[t] = _eliminate(t, D, U, V, allow_reduce=t > 1)
        if consume:
            A.D[t] = A.V[t] = A.B12[t] = A.B21[t] = None
            if tree.is_leaf(t):
                A.U[t] = None
        if fac.omega is not None:
            reduced.append(t)
        if not tree.is_leaf(t):
            fac.C12, fac.C21, fac.R1, fac.R2 = C12, C21, R1, R2
        nodes[t] = fac
    # rank check against the largest diagonal magnitude over all factors
    diag = {t: np.abs(np.diag(f.D11)) for t, f in enumerate(nodes) if f is not None}
    dmax = max((d.max() for d in diag.values() if d.size), default=0.0)
    deficient, ratio = [], 1.0
    for t, d in diag.items():
        if d.size:
            r = d.min() / dmax if dmax > 0 else 0.0
            ratio = min(ratio, r)
            if r < RANK_TOL:
                deficient.append(t)
    return UrvFactorization((tree.M, tree.N), tree, nodes, reduced, sorted(deficient), ratio)


def _check_rank(fact):
    if fact.deficient:
        t = fact.deficient[0]
        d = np.abs(np.diag(fact.nodes[t].D11))
        dmax = max(np.abs(np.diag(f.D11)).max() for f in fact.nodes if f is not None and f.c)
        raise RankDeficiencyError(t, float(d.min() / dmax) if dmax else 0.0)


def _cols(a, n, what):
    a = np.asarray(a)
    if a.ndim not in (1, 2) or a.shape[0] != n:
        raise ValueError(f"{what}: expected {n} rows, got shape {a.shape}")
    return a.reshape(n, -1).astype(np.complex128, copy=False), a.ndim == 1


def _phase1(fact, f):
    """Bottom-up transforms of the right-hand side; returns f1 per node."""
    tree = fact.tree
    f1 = [None] * (tree.n_nodes + 1)
    f2 = [None] * (tree.n_nodes + 1)
    for t in range(tree.n_nodes, 0, -1):
        nf = fact.nodes[t]
        if tree.is_leaf(t):
            ft = f[tree.rows(t)]
        else:
            ft = np.vstack((f2[2 * t], f2[2 * t + 1]))
            f2[2 * t] = f2[2 * t + 1] = None
        if nf.omega is not None:
            ft = nf.omega.apply_qh(ft)[: nf.m_red]
        fh = nf.p.apply_qh(ft)
        f1[t], f2[t] = fh[: nf.c], fh[nf.c:]
    return f1


def _solve_tri(D11, b):
    return sla.solve_triangular(D11, b, lower=False, check_finite=False)


def _solve_tri_h(D11, b):
    return sla.solve_triangular(D11, b, lower=False, trans="C", check_finite=False)


def urv_solve(fact: UrvFactorization, f):
    """Least-squares solution ``argmin ||A u - f||`` from the URV factors.

    ``f`` may hold several right-hand sides as columns.
    """
    _check_rank(fact)
    tree = fact.tree
    fb, squeeze = _cols(f, tree.M, "urv_solve")
    f1 = _phase1(fact, fb)
    s = fb.shape[1]
    u = np.empty((tree.N, s), dtype=np.complex128)
    u2 = [None] * (tree.n_nodes + 1)
    g = [None] * (tree.n_nodes + 1)
    for t in range(1, tree.n_nodes + 1):
        nf = fact.nodes[t]
        if t == 1:
            w = _solve_tri(nf.D11, f1[1])
        else:
            rhs = f1[t] - nf.D12 @ u2[t] - nf.U1 @ g[t]
            w = _swap_q_apply(nf.qv, nf.kv, np.vstack((_solve_tri(nf.D11, rhs), u2[t])))
        if tree.is_leaf(t):
            u[tree.cols(t)] = w
        else:
            a1, a2 = 2 * t, 2 * t + 1
            kv1 = fact.nodes[a1].kv
            u2[a1], u2[a2] = w[:kv1], w[kv1:]
            g[a1] = nf.C12 @ u2[a2]
            g[a2] = nf.C21 @ u2[a1]
            if t > 1:
                g[a1] += nf.R1 @ g[t]
                g[a2] += nf.R2 @ g[t]
        u2[t] = g[t] = f1[t] = None
    return u[:, 0] if squeeze else u


def urv_adjoint_solve(fact: UrvFactorization, v):
    """Apply the adjoint of the solve map, ``S^H v`` where ``u = S f``.

    Needed for the conjugate transpose of a pseudo-inverse; it runs the solve
    in reverse: adjoint triangular solves bottom-up, then the adjoint row
    transforms top-down.
    """
    _check_rank(fact)
    tree = fact.tree
    vb, squeeze = _cols(v, tree.N, "urv_adjoint_solve")
    n_all = tree.n_nodes + 1
    ubar2 = [None] * n_all
    gbar = [None] * n_all
    f1bar = [None] * n_all
    for t in range(tree.n_nodes, 0, -1):
        nf = fact.nodes[t]
        if tree.is_leaf(t):
            wbar = vb[tree.cols(t)]
            gchild = None
        else:
            a1, a2 = 2 * t, 2 * t + 1
            wbar = np.vstack((ubar2[a1] + nf.C21.conj().T @ gbar[a2],
                              ubar2[a2] + nf.C12.conj().T @ gbar[a1]))
            gchild = None
            if t > 1:
                gchild = nf.R1.conj().T @ gbar[a1] + nf.R2.conj().T @ gbar[a2]
            ubar2[a1] = ubar2[a2] = gbar[a1] = gbar[a2] = None
        if t == 1:
            f1bar[1] = _solve_tri_h(nf.D11, wbar)
            break
        y = _swap_qh_apply(nf.qv, nf.kv, wbar)
        z = _solve_tri_h(nf.D11, y[: nf.c])
        f1bar[t] = z
        ubar2[t] = y[nf.c:] - nf.D12.conj().T @ z
        gt = -(nf.U1.conj().T @ z)
        gbar[t] = gt if gchild is None else gchild + gt
    out = _phase1_adjoint(fact, f1bar, vb.shape[1])
    return out[:, 0] if squeeze else out


def _phase1_adjoint(fact, f1, s):
    """Adjoint of :func:`_phase1` (discarded rows receive zero)."""
    tree = fact.tree
    out = np.zeros((tree.M, s), dtype=np.complex128)
    f2 = [None] * (tree.n_nodes + 1)
    for t in range(1, tree.n_nodes + 1):
        nf = fact.nodes[t]
        rest = f2[t] if f2[t] is not None else np.zeros((nf.m_red - nf.c, s), dtype=np.complex128)
        ft = nf.p.apply_q(np.vstack((f1[t], rest)))
        if nf.omega is not None:
            ft = nf.omega.apply_q(np.vstack((ft, np.zeros((nf.m - nf.m_red, s), dtype=np.complex128))))
        if tree.is_leaf(t):
            out[tree.rows(t)] = ft
        else:
            a1 = 2 * t
            k1 = fact.nodes[a1].m_red - fact.nodes[a1].c
            f2[a1], f2[a1 + 1] = ft[:k1], ft[k1:]
        f2[t] = f1[t] = None
    return out


def urv_apply(fact: UrvFactorization, u):
    """``A @ u`` evaluated from the factors alone (used to verify them)."""
    tree = fact.tree
    ub, squeeze = _cols(u, tree.N, "urv_apply")
    s = ub.shape[1]
    n_all = tree.n_nodes + 1
    uh1 = [None] * n_all
    uh2 = [None] * n_all
    for t in range(tree.n_nodes, 0, -1):
        nf = fact.nodes[t]
        if tree.is_leaf(t):
            w = ub[tree.cols(t)]
        else:
            w = np.vstack((uh2[2 * t], uh2[2 * t + 1]))
        if t == 1:
            uh1[1] = w
            break
        y = _swap_qh_apply(nf.qv, nf.kv, w)
        uh1[t], uh2[t] = y[: nf.c], y[nf.c:]
    f1 = [None] * n_all
    g = [None] * n_all
    for t in range(1, n_all):
        nf = fact.nodes[t]
        if t == 1:
            f1[1] = nf.D11 @ uh1[1]
        else:
            f1[t] = nf.D11 @ uh1[t] + nf.D12 @ uh2[t] + nf.U1 @ g[t]
        if not tree.is_leaf(t):
            a1, a2 = 2 * t, 2 * t + 1
            g[a1] = nf.C12 @ uh2[a2]
            g[a2] = nf.C21 @ uh2[a1]
            if t > 1:
                g[a1] += nf.R1 @ g[t]
                g[a2] += nf.R2 @ g[t]
    out = _phase1_adjoint(fact, f1, s)
    return out[:, 0] if squeeze else out


def urv_apply_adjoint(fact: UrvFactorization, f):
    """``A^H @ f`` evaluated from the factors alone."""
    tree = fact.tree
    fb, squeeze = _cols(f, tree.M, "urv_apply_adjoint")
    n_all = tree.n_nodes + 1
    f1 = _phase1(fact, fb)
    # bottom-up: adjoint of the g recursion
    gbar = [None] * n_all
    for t in range(tree.n_nodes, 1, -1):
        nf = fact.nodes[t]
        gt = nf.U1.conj().T @ f1[t]
        if not tree.is_leaf(t):
            gt = gt + nf.R1.conj().T @ gbar[2 * t] + nf.R2.conj().T @ gbar[2 * t + 1]
        gbar[t] = gt
    # top-down: adjoint of the column transforms
    u = np.empty((tree.N, fb.shape[1]), dtype=np.complex128)
    up = [None] * n_all
    for t in range(1, n_all):
        nf = fact.nodes[t]
        if t == 1:
            w = nf.D11.conj().T @ f1[1]
        else:
            u2 = nf.D12.conj().T @ f1[t] + up[t]
            w = _swap_q_apply(nf.qv, nf.kv, np.vstack((nf.D11.conj().T @ f1[t], u2)))
        if tree.is_leaf(t):
            u[tree.cols(t)] = w
        else:
            a1, a2 = 2 * t, 2 * t + 1
            kv1 = fact.nodes[a1].kv
            up[a1] = w[:kv1] + nf.C21.conj().T @ gbar[a2]
            up[a2] = w[kv1:] + nf.C12.conj().T @ gbar[a1]
        up[t] = f1[t] = gbar[t] = None
    return u[:, 0] if squeeze else u


def urv_to_dense(fact: UrvFactorization, cap: int = 8192) -> np.ndarray:
    """Dense matrix represented by the factors (small sizes only)."""
    M, N = fact.shape
    if max(M, N) > cap:
        raise ValueError(f"dense reassembly of {M}x{N} exceeds cap {cap}")
    return urv_apply(fact, np.eye(N, dtype=np.complex128))
