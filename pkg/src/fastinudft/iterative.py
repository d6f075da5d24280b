"""Conjugate gradients on the normal equations ``A^H A u = A^H f``.

Both solvers touch ``A`` only through a forward and an adjoint oracle, one
call each per iteration.  The least-squares residual ``f - A u`` is carried
along by the recurrence, so reporting it costs no extra oracle calls.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

__all__ = ["IterationReport", "PreconditionerError", "cg_normal", "pcg_normal"]


class PreconditionerError(ValueError):
    """The preconditioner does not behave like a Hermitian operator."""


@dataclass
class IterationReport:
    """Outcome of a CG/PCG run.

    Attributes
    ----------
    iterations : int
        Iterations performed.
    converged : bool
        Whether the normal-equation residual reached the tolerance.
    relative_residual_history : ndarray
        ``||A^H (f - A u_k)|| / ||A^H f||`` after each iteration.
    solution_residual_history : ndarray
        ``||f - A u_k|| / ||f||`` after each iteration.
    final_solution_residual : float
        Last entry of the above (1.0 or 0.0 if no iteration ran).
    t_pre, t_iter : float
        Setup time supplied by the caller and iteration wall time.
    """

    iterations: int = 0
    converged: bool = False
    relative_residual_history: np.ndarray = field(default_factory=lambda: np.zeros(0))
    solution_residual_history: np.ndarray = field(default_factory=lambda: np.zeros(0))
    final_solution_residual: float = 1.0
    t_pre: float = 0.0
    t_iter: float = 0.0
    forward_calls: int = 0
    adjoint_calls: int = 0
    precond_calls: int = 0


def _run(forward, adjoint, precond, f, tol, maxit, u0, t_pre, check_hermitian):
    if tol <= 0:
        raise ValueError("tol must be positive")
    if maxit < 1:
        raise ValueError("maxit must be at least 1")
    f = np.asarray(f, dtype=np.complex128)
    report = IterationReport(t_pre=t_pre)
    t0 = time.perf_counter()
    fnorm = np.linalg.norm(f)
    b = adjoint(f)
    report.adjoint_calls += 1
    bnorm = np.linalg.norm(b)
    if fnorm == 0.0 or bnorm == 0.0:
        u = np.zeros_like(b)
        report.converged = True
        report.final_solution_residual = 0.0 if fnorm == 0.0 else 1.0
        report.t_iter = time.perf_counter() - t0
        return u, report
    if u0 is None:
        u = np.zeros_like(b)
        res = f.copy()  # f - A u
        r = b.copy()  # A^H (f - A u)
    else:
        u = np.array(u0, dtype=np.complex128)
        res = f - forward(u)
        r = adjoint(res)
        report.forward_calls += 1
        report.adjoint_calls += 1

    def apply_precond(v):
        report.precond_calls += 1
        z = precond(v)
        if check_hermitian:
            ip = np.vdot(v, z)
            if abs(ip.imag) > 1e-8 * np.linalg.norm(z) * np.linalg.norm(v):
                raise PreconditionerError(
                    f"<Pv, v> has imaginary part {ip.imag:.3e}; preconditioner is not Hermitian"
                )
        return z

    z = r if precond is None else apply_precond(r)
    p = z.copy()
    rz = np.vdot(r, z).real
    hist, shist = [], []
    for _ in range(maxit):
        q = forward(p)
        w = adjoint(q)
        report.forward_calls += 1
        report.adjoint_calls += 1
        qq = np.vdot(q, q).real
        if qq == 0.0:
            break
        a = rz / qq
        u += a * p
        res -= a * q
        r -= a * w
        report.iterations += 1
        rel = np.linalg.norm(r) / bnorm
        hist.append(rel)
        shist.append(np.linalg.norm(res) / fnorm)
        if not np.isfinite(rel):
            break
        if rel <= tol:
            report.converged = True
            break
        z = r if precond is None else apply_precond(r)
        rz_new = np.vdot(r, z).real
        p = z + (rz_new / rz) * p
        rz = rz_new
    report.relative_residual_history = np.asarray(hist)
    report.solution_residual_history = np.asarray(shist)
    report.final_solution_residual = shist[-1] if shist else 1.0
    report.t_iter = time.perf_counter() - t0
    return u, report


def cg_normal(forward, adjoint, f, tol=1e-12, maxit=500, u0=None, t_pre=0.0):
    """Plain CG on ``A^H A u = A^H f``.

    Parameters
    ----------
    forward, adjoint : callable
        ``u -> A u`` and ``f -> A^H f``.
    f : ndarray
        Right-hand side of length M.
    tol : float
        Stop once ``||A^H (f - A u)|| <= tol * ||A^H f||``.
    maxit : int
        Iteration cap; hitting it is reported, not raised.

    Returns
    -------
    u : ndarray
    report : IterationReport
    """
    return _run(forward, adjoint, None, f, tol, maxit, u0, t_pre, False)


def pcg_normal(forward, adjoint, precond, f, tol=1e-12, maxit=500, u0=None, t_pre=0.0,
               check_hermitian=True):
    """Preconditioned CG on the normal equations with ``M^{-1} = precond``.

    Raises
    ------
    PreconditionerError
        If ``<P r, r>`` has a relative imaginary part above 1e-8.
    """
    return _run(forward, adjoint, precond, f, tol, maxit, u0, t_pre, check_hermitian)
