"""Desk-scale experiment drivers behind the command-line interface.

Each ``run_*`` function takes an :class:`ExperimentConfig` and yields CSV rows
as dictionaries, one per table cell, so long sweeps can be streamed to disk.
Timings use ``time.perf_counter`` with the stage boundaries of the solver:
construction (compressions), factorization (URV) and solution.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, replace

import numpy as np

from . import inudft
from .iterative import cg_normal, pcg_normal
from .problem import (DistributionCase, NudftProblem, PointDistribution, dense_forward,
                      dense_matrix, generate_points, make_rng, truncation_bound_frobenius)
from .transforms import Type3Plan
from .urv import urv_apply

__all__ = [
    "ExperimentConfig",
    "COMMANDS",
    "DESK_N_CAP",
    "estimate_relative_frobenius_error",
    "epsilon_rank",
    "run_approx_error",
    "run_direct_solve",
    "run_iterative_compare",
    "run_rank_probe",
    "run_error_decomposition",
    "run_command",
]

log = logging.getLogger(__name__)

DESK_N_CAP = 1 << 16
REFERENCE_TOL = 1e-13  # NUFFT tolerance of the reference operator A
_KEEP_HSS_BELOW = 1 << 15  # larger problems drop HSS generators after factoring

COMMANDS = ("approx-error", "direct-solve", "iterative-compare", "rank-probe", "error-decomp")

ALPHAS = (1e-7, 1e-4, 0.1, 0.4)

# per-command defaults for fields left unset (None)
_DEFAULTS = {
    "approx-error": dict(cases=("rp",), n_list=(1024,), R_list=(0, 16, 32, 64, 128), n_seeds=5),
    "direct-solve": dict(n_list=tuple(1 << n for n in range(10, 17))),
    "iterative-compare": dict(n_list=(1 << 14, 1 << 15, 1 << 16)),
    "rank-probe": dict(cases=("rp",), n_list=tuple(1 << n for n in range(8, 13)), alpha_list=(0.4,)),
    "error-decomp": dict(cases=("rp",), n_list=(4096,), rho_list=(1e-12, 1e-7, 1e-4)),
}


@dataclass
class ExperimentConfig:
    """Parameters of one experiment run.

    List-valued fields left as None take the command's default; see
    :func:`ExperimentConfig.resolved`.
    """

    command: str = "direct-solve"
    cases: tuple | None = None
    M_ratio: int = 4
    n_list: tuple | None = None
    alpha_list: tuple | None = None
    beta: float = 0.4
    R_list: tuple | None = None
    rho_list: tuple | None = None
    precond_rho: float = 1e-7
    k: int | None = None  # HSS rank of H; None means ceil(5 log2 N)
    leaf_size: int = inudft.DEFAULT_LEAF_SIZE
    seed: int = 0
    n_seeds: int | None = None
    tol: float = 1e-12
    maxit: int = 500
    n_probes: int = 30
    eps: float = 1e-7
    repeats: int = 1
    full: bool = False
    threads: int = 1
    output: str | None = None

    def resolved(self) -> "ExperimentConfig":
        """Copy with command defaults filled in and every entry validated."""
        if self.command not in COMMANDS:
            raise ValueError(f"unknown command {self.command!r}")
        base = dict(cases=("pp", "rp"), alpha_list=ALPHAS, R_list=(0,), rho_list=(1e-12,),
                    n_seeds=1)
        base.update(_DEFAULTS[self.command])
        kw = {k: v for k, v in base.items() if getattr(self, k) is None}
        cfg = replace(self, **kw)
        cfg.cases = tuple(DistributionCase.parse(c).value for c in cfg.cases)
        cfg.n_list = tuple(int(n) for n in cfg.n_list)
        cfg.alpha_list = tuple(float(a) for a in cfg.alpha_list)
        cfg.R_list = tuple(int(r) for r in cfg.R_list)
        cfg.rho_list = tuple(float(r) for r in cfg.rho_list)
        cfg._validate()
        return cfg

    def _validate(self):
        if self.M_ratio < 1:
            raise ValueError("M_ratio must be >= 1")
        for n in self.n_list:
            if n < 2:
                raise ValueError(f"N must be >= 2, got {n}")
            if n > DESK_N_CAP and not self.full:
                raise ValueError(f"N={n} exceeds the desk cap {DESK_N_CAP}; pass --full to lift it")
        for a in self.alpha_list:
            if not 0.0 <= a < 0.5:
                raise ValueError(f"alpha must lie in [0, 1/2), got {a}")
        if not 0.0 <= self.beta < 0.5:
            raise ValueError(f"beta must lie in [0, 1/2), got {self.beta}")
        for r in self.R_list:
            if r < 0:
                raise ValueError("R must be >= 0")
        for rho in self.rho_list + (self.precond_rho,):
            if not 0.0 < rho < 1.0:
                raise ValueError(f"rho must lie in (0, 1), got {rho}")
        if self.k is not None and self.k < 1:
            raise ValueError("k must be >= 1")
        for name in ("leaf_size", "n_seeds", "maxit", "n_probes", "repeats", "threads"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")
        if not (self.tol > 0 and self.eps > 0):
            raise ValueError("tol and eps must be positive")


# ------------------------------------------------------------------ helpers


def _complex_gaussian(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


def estimate_relative_frobenius_error(applyA, applyAfast, N: int, n_probes: int = 30,
                                      seed: int = 0) -> float:
    """Randomized estimate of ``||A - A_fast||_F / ||A||_F``.

    Uses ``n_probes`` standard complex Gaussian vectors ``g``:
    ``sqrt(sum ||(A - A_fast) g||^2 / sum ||A g||^2)``.  Both oracles must
    accept an ``N x n`` block.
    """
    if n_probes < 1:
        raise ValueError("n_probes must be >= 1")
    G = _complex_gaussian(make_rng(seed), (N, n_probes))
    ref = applyA(G)
    diff = ref - applyAfast(G)
    den = np.vdot(ref, ref).real
    if den == 0.0:
        return 0.0 if np.vdot(diff, diff).real == 0.0 else math.inf
    return math.sqrt(np.vdot(diff, diff).real / den)


def epsilon_rank(S, eps: float) -> int:
    """Number of singular values above ``eps`` times the largest."""
    sv = np.linalg.svd(S, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int(np.count_nonzero(sv > eps * sv[0]))


def _problem(cfg, case, N, alpha, seed):
    return generate_points(PointDistribution(case, alpha, cfg.beta, seed), cfg.M_ratio * N, N)


def _nufft_tol(rho):
    return min(max(rho / 10.0, 2e-15), 0.09)


def _build_b(cfg, problem, rho, R, seed, keep):
    N = problem.N
    return inudft.build_type2(problem.sample_points, N + 2 * R, rho, offset=-R,
                              leaf_size=cfg.leaf_size, nufft_tol=_nufft_tol(rho),
                              seed=seed + 1, keep_hss=keep)


def _build(cfg, problem, rho, R=0, seed=0, b_fast=None):
    keep = problem.N < _KEEP_HSS_BELOW
    return inudft.build_type3(problem, rho, k=cfg.k, R=R, leaf_size=cfg.leaf_size, seed=seed,
                              b_fast=b_fast, keep_hss=keep)


def _rhs(problem, seed):
    """Consistent right-hand side ``f = A u0`` and the reference operator."""
    plan = Type3Plan(problem.sample_points, problem.frequencies, REFERENCE_TOL)
    u0 = _complex_gaussian(make_rng(seed + 7919), problem.N)
    return plan, plan.forward(u0)


def _residual(plan, u, f):
    return float(np.linalg.norm(plan.forward(u) - f) / np.linalg.norm(f))


# --------------------------------------------------------------- commands


def run_approx_error(cfg: ExperimentConfig):
    """Rows ``alpha, R, mean_err, bound``: seed-averaged estimate of the
    relative Frobenius error of ``A_fast``, with the analytic bound (blank
    where ``R < 2``)."""
    cfg = cfg.resolved()
    N = cfg.n_list[0]
    rho = cfg.rho_list[0]
    case = cfg.cases[0]
    errs = {}
    for R in cfg.R_list:
        for i in range(cfg.n_seeds):
            seed = cfg.seed + i
            b_fast = None
            for alpha in cfg.alpha_list:
                prob = _problem(cfg, case, N, alpha, seed)
                if b_fast is None:
                    # points do not depend on alpha, so B is shared
                    b_fast = _build_b(cfg, prob, rho, R, seed, prob.N < _KEEP_HSS_BELOW)
                s = _build(cfg, prob, rho, R, seed, b_fast)
                e = estimate_relative_frobenius_error(s.forward_exact, s.apply, N, cfg.n_probes,
                                                      seed=seed)
                errs.setdefault((alpha, R), []).append(e)
                log.info("approx-error alpha=%g R=%d seed=%d err=%.3e", alpha, R, seed, e)
    for alpha in cfg.alpha_list:
        for R in cfg.R_list:
            bound = truncation_bound_frobenius(R) if R >= 2 else None
            yield dict(alpha=alpha, R=R, mean_err=float(np.mean(errs[alpha, R])), bound=bound)


def run_direct_solve(cfg: ExperimentConfig):
    """Rows with stage timings ``t_c, t_f, t_s``, the residual ``r_s`` and the
    construction breakdown; timing cells are medians over ``repeats``."""
    cfg = cfg.resolved()
    for case in cfg.cases:
        for N in cfg.n_list:
            for alpha in cfg.alpha_list:
                for rho in cfg.rho_list:
                    for R in cfg.R_list:
                        yield _direct_row(cfg, case, N, alpha, rho, R)


def _direct_row(cfg, case, N, alpha, rho, R):
    prob = _problem(cfg, case, N, alpha, cfg.seed)
    plan, f = _rhs(prob, cfg.seed)
    cols = {k: [] for k in ("t_c", "t_f", "t_s", "t_type2_build", "t_type2_urv", "t_blackbox")}
    s = u = None
    for _ in range(cfg.repeats):
        s = u = None
        s = _build(cfg, prob, rho, R, cfg.seed)
        t0 = time.perf_counter()
        u = s.solve(f)
        t_s = time.perf_counter() - t0
        tm = s.timings
        cols["t_c"].append(tm["construction"])
        cols["t_f"].append(tm["factorization"])
        cols["t_s"].append(t_s)
        cols["t_type2_build"].append(tm["type2_compress"])
        cols["t_type2_urv"].append(tm["type2_factorize"])
        cols["t_blackbox"].append(tm["blackbox"])
    med = {k: float(np.median(v)) for k, v in cols.items()}
    r_s = _residual(plan, u, f)
    log.info("direct-solve %s N=%d alpha=%g rho=%g: t_c=%.2f t_f=%.2f r_s=%.2e",
             case, N, alpha, rho, med["t_c"], med["t_f"], r_s)
    return dict(case=case, N=N, M=prob.M, alpha=alpha, rho=rho, R=R, k=s.k,
                t_c=med["t_c"], t_f=med["t_f"], t_s=med["t_s"], r_s=r_s,
                t_type2_build=med["t_type2_build"], t_type2_urv=med["t_type2_urv"],
                t_blackbox=med["t_blackbox"],
                blackbox_frac=med["t_blackbox"] / med["t_c"] if med["t_c"] > 0 else None,
                t_build=float(np.median(np.add(cols["t_c"], cols["t_f"]))))


def run_iterative_compare(cfg: ExperimentConfig):
    """CG and PCG rows: ``t_pre, t_iter, n_iter, r_s, converged``.

    The preconditioner is built at ``precond_rho``.  Its type-2 part is
    shared across alpha (same points); ``t_pre`` still charges its full
    build time.  Runs that hit ``maxit`` leave ``t_iter`` and ``r_s`` blank.
    """
    cfg = cfg.resolved()
    rho = cfg.precond_rho
    for case in cfg.cases:
        for N in cfg.n_list:
            b_fast = None
            for alpha in cfg.alpha_list:
                prob = _problem(cfg, case, N, alpha, cfg.seed)
                plan, f = _rhs(prob, cfg.seed)
                _, rep = cg_normal(plan.forward, plan.adjoint, f, cfg.tol, cfg.maxit)
                yield _iter_row(case, N, alpha, "CG", rep)
                if b_fast is None:
                    b_fast = _build_b(cfg, prob, rho, 0, cfg.seed, False)
                s = _build(cfg, prob, rho, 0, cfg.seed, b_fast)
                t_pre = sum(s.timings[k] for k in ("construction", "factorization"))
                _, rep = pcg_normal(plan.forward, plan.adjoint, s.precondition, f, cfg.tol,
                                    cfg.maxit, t_pre=t_pre)
                s = None
                yield _iter_row(case, N, alpha, "PCG", rep)


def _iter_row(case, N, alpha, method, rep):
    log.info("iterative-compare %s N=%d alpha=%g %s: %d iterations (%s)", case, N, alpha,
             method, rep.iterations, "converged" if rep.converged else "not converged")
    ok = rep.converged
    t_pre = rep.t_pre if method == "PCG" else None  # plain CG has no setup
    return dict(case=case, N=N, alpha=alpha, method=method, t_pre=t_pre,
                t_iter=rep.t_iter if ok else None, n_iter=rep.iterations,
                r_s=rep.final_solution_residual if ok else None, converged=ok)


def run_rank_probe(cfg: ExperimentConfig, block_cols: int = 256):
    """Rows ``case, N, alpha, eps, rank``: eps-rank of the top-right
    ``N/2 x N/2`` block of ``B_fast^+ A`` (R = 0), formed column by column."""
    cfg = cfg.resolved()
    rho = cfg.rho_list[0]
    for case in cfg.cases:
        for alpha in cfg.alpha_list:
            for N in cfg.n_list:
                prob = _problem(cfg, case, N, alpha, cfg.seed)
                b_fast = _build_b(cfg, prob, rho, 0, cfg.seed, False)
                h = N // 2
                S = np.empty((h, N - h), dtype=np.complex128)
                x, w = prob.sample_points, prob.frequencies
                for c0 in range(h, N, block_cols):
                    c1 = min(N, c0 + block_cols)
                    S[:, c0 - h:c1 - h] = inudft.type2_pinv_apply(b_fast, dense_matrix(x, w[c0:c1]))[:h]
                rank = epsilon_rank(S, cfg.eps)
                log.info("rank-probe %s N=%d alpha=%g rank=%d", case, N, alpha, rank)
                yield dict(case=case, N=N, alpha=alpha, eps=cfg.eps, rank=rank)


def run_error_decomposition(cfg: ExperimentConfig):
    """Rows ``case, N, alpha, rho, e_B, e_H, e_A``; each error is a 30-probe
    estimate against dense (brute-force) products."""
    cfg = cfg.resolved()
    N = cfg.n_list[0]
    for case in cfg.cases:
        for rho in cfg.rho_list:
            b_fast = None
            for alpha in cfg.alpha_list:
                prob = _problem(cfg, case, N, alpha, cfg.seed)
                if b_fast is None:
                    b_fast = _build_b(cfg, prob, rho, 0, cfg.seed, N < _KEEP_HSS_BELOW)
                s = _build(cfg, prob, rho, 0, cfg.seed, b_fast)
                yield dict(case=case, N=N, alpha=alpha, rho=rho, **_decompose(cfg, prob, s))


def _decompose(cfg, prob, s):
    N = prob.N
    x = prob.sample_points
    B = (x, np.arange(N, dtype=np.float64))
    e_B = estimate_relative_frobenius_error(lambda G: dense_forward(B, G), s.b_fast.apply, N,
                                            cfg.n_probes, seed=cfg.seed)
    # H acts on columns in sorted-frequency order
    perm = s.col_perm

    def a_sorted(G):
        U = np.empty_like(G)
        U[perm] = G
        return dense_forward(prob, U)

    def h_fast(G):
        return urv_apply(s.h_urv, G) if s.H_hss is None else s.H_hss.matvec(G)

    e_H = estimate_relative_frobenius_error(lambda G: s.b_fast.pinv(a_sorted(G)), h_fast, N,
                                            cfg.n_probes, seed=cfg.seed + 1)
    e_A = estimate_relative_frobenius_error(lambda G: dense_forward(prob, G), s.apply, N,
                                            cfg.n_probes, seed=cfg.seed + 2)
    log.info("error-decomp N=%d rho=%g: e_B=%.2e e_H=%.2e e_A=%.2e", N, s.b_fast.rho, e_B, e_H, e_A)
    return dict(e_B=e_B, e_H=e_H, e_A=e_A)


_RUNNERS = {
    "approx-error": run_approx_error,
    "direct-solve": run_direct_solve,
    "iterative-compare": run_iterative_compare,
    "rank-probe": run_rank_probe,
    "error-decomp": run_error_decomposition,
}


def run_command(cfg: ExperimentConfig):
    """Dispatch to the runner of ``cfg.command``; yields rows."""
    if cfg.command not in _RUNNERS:
        raise ValueError(f"unknown command {cfg.command!r}")
    return _RUNNERS[cfg.command](cfg)


def solve_problem(problem: NudftProblem, f, rho=1e-12, k=None, R=0, leaf_size=inudft.DEFAULT_LEAF_SIZE,
                  refine=0, seed=0):
    """One-shot direct solve, optionally followed by up to ``refine`` PCG steps
    with the solver as preconditioner.  Returns ``(u, info)``."""
    t0 = time.perf_counter()
    s = inudft.build_type3(problem, rho, k=k, R=R, leaf_size=leaf_size, seed=seed,
                           keep_hss=problem.N < _KEEP_HSS_BELOW)
    u = s.solve(f)
    t1 = time.perf_counter()
    plan = Type3Plan(problem.sample_points, problem.frequencies, REFERENCE_TOL)
    info = dict(t_build=s.timings["construction"] + s.timings["factorization"],
                t_total=t1 - t0, iterations=0)
    if refine:
        u, rep = pcg_normal(plan.forward, plan.adjoint, s.precondition, f, 1e-12, refine, u0=u)
        info["iterations"] = rep.iterations
    fn = np.linalg.norm(f)
    info["residual"] = _residual(plan, u, f) if fn > 0 else 0.0
    return u, info
