"""Problem instances, point generators and dense reference transforms.

The dense routines here are the brute-force oracles every fast path is
checked against.  Phases ``exp(2*pi*i*x*w)`` are formed from an exactly
reduced argument (error-free product, then fractional part) so that the
oracle stays accurate to ~1e-16 even when ``x*w`` is large.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "DistributionCase",
    "PointDistribution",
    "NudftProblem",
    "CoefficientMatrixSpec",
    "generate_points",
    "dense_matrix",
    "dense_forward",
    "dense_adjoint",
    "expi2pi_product",
    "kernel_G",
    "q_entry",
    "coefficient_matrix",
    "type2_matrix",
    "truncation_bound_frobenius",
    "make_rng",
]

_SPLITTER = 134217729.0  # 2**27 + 1


def _split(a):
    c = _SPLITTER * a
    hi = c - (c - a)
    return hi, a - hi


def _two_product(a, b):
    """Return ``(p, e)`` with ``p = fl(a*b)`` and ``a*b == p + e`` exactly."""
    p = a * b
    ah, al = _split(a)
    bh, bl = _split(b)
    e = ((ah * bh - p) + ah * bl + al * bh) + al * bl
    return p, e


def expi2pi_product(a, b):
    """Accurate ``exp(2*pi*i*a*b)`` for float arrays broadcastable together."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    p, e = _two_product(a, b)
    frac = (p - np.rint(p)) + e
    return np.exp(2j * np.pi * frac)


def make_rng(seed) -> np.random.Generator:
    """Counter-based generator so draws are reproducible across platforms."""
    return np.random.Generator(np.random.Philox(seed))


class DistributionCase(enum.Enum):
    PERTURBATION_PERTURBATION = "pp"
    RANDOM_PERTURBATION = "rp"

    @classmethod
    def parse(cls, value) -> "DistributionCase":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {
            "pp": cls.PERTURBATION_PERTURBATION,
            "perturbation_perturbation": cls.PERTURBATION_PERTURBATION,
            "rp": cls.RANDOM_PERTURBATION,
            "random_perturbation": cls.RANDOM_PERTURBATION,
        }
        if key not in aliases:
            raise ValueError(f"unknown distribution case {value!r}")
        return aliases[key]


@dataclass(frozen=True)
class PointDistribution:
    case: DistributionCase
    alpha: float = 0.0
    beta: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "case", DistributionCase.parse(self.case))
        if not 0.0 <= self.alpha < 0.5:
            raise ValueError(f"alpha must lie in [0, 1/2), got {self.alpha}")
        if not 0.0 <= self.beta < 0.5:
            raise ValueError(f"beta must lie in [0, 1/2), got {self.beta}")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")


@dataclass(frozen=True, eq=False)
class NudftProblem:
    """Sample points ``x`` in [0, 1) and frequencies ``omega`` in [-1/2, N-1/2)."""

    sample_points: np.ndarray
    frequencies: np.ndarray

    def __post_init__(self):
        x = np.ascontiguousarray(self.sample_points, dtype=np.float64)
        w = np.ascontiguousarray(self.frequencies, dtype=np.float64)
        if x.ndim != 1 or w.ndim != 1 or x.size == 0 or w.size == 0:
            raise ValueError("sample points and frequencies must be nonempty 1-D arrays")
        if x.size < w.size:
            raise ValueError(f"need M >= N, got M={x.size}, N={w.size}")
        if np.any(x < 0.0) or np.any(x >= 1.0):
            raise ValueError("sample points must lie in [0, 1)")
        n = w.size
        if np.any(w < -0.5) or np.any(w >= n - 0.5):
            raise ValueError(f"frequencies must lie in [-1/2, {n}-1/2)")
        x.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "sample_points", x)
        object.__setattr__(self, "frequencies", w)

    @property
    def M(self) -> int:
        return self.sample_points.size

    @property
    def N(self) -> int:
        return self.frequencies.size


@dataclass(frozen=True)
class CoefficientMatrixSpec:
    """Row index set ``-R <= l <= N-1+R`` of the expansion-coefficient matrix."""

    N: int
    R: int = 0

    def __post_init__(self):
        if self.N < 1 or self.R < 0:
            raise ValueError("need N >= 1 and R >= 0")

    @property
    def row_index_set(self) -> np.ndarray:
        return np.arange(-self.R, self.N + self.R)

    @property
    def n_rows(self) -> int:
        return self.N + 2 * self.R


def generate_points(dist: PointDistribution, M: int, N: int) -> NudftProblem:
    """Draw a problem instance.

    Perturbation-perturbation: ``x_j = (j + beta*phi_j)/M``; random-perturbation:
    ``x_j`` i.i.d. uniform on [0, 1).  In both cases ``omega_k = k + alpha*psi_k``
    with ``phi, psi`` uniform on [-1, 1].
    """
    if M < N or N < 1:
        raise ValueError(f"need M >= N >= 1, got M={M}, N={N}")
    rng = make_rng(dist.seed)
    psi = rng.uniform(-1.0, 1.0, size=N)
    if dist.case is DistributionCase.PERTURBATION_PERTURBATION:
        phi = rng.uniform(-1.0, 1.0, size=M)
        x = (np.arange(M) + dist.beta * phi) / M
        # only j=0 can leave [0, 1); reflect it so the points stay sorted
        x = np.abs(x)
    else:
        x = rng.random(M)
    omega = np.arange(N) + dist.alpha * psi
    return NudftProblem(x, omega)


def dense_matrix(x, omega) -> np.ndarray:
    """Explicit matrix ``A[j, k] = exp(2*pi*i*x_j*omega_k)``."""
    return expi2pi_product(np.asarray(x)[:, None], np.asarray(omega)[None, :])


def _as_problem_arrays(problem):
    if isinstance(problem, NudftProblem):
        return problem.sample_points, problem.frequencies
    x, w = problem
    return np.asarray(x, dtype=np.float64), np.asarray(w, dtype=np.float64)


def dense_forward(problem, u, block: int = 2048) -> np.ndarray:
    """``f_j = sum_k exp(2*pi*i*x_j*omega_k) u_k`` by direct summation.

    ``u`` may be a vector or a matrix of column vectors.  Rows are processed
    in blocks so memory stays O(block*N).
    """
    x, w = _as_problem_arrays(problem)
    u = np.asarray(u)
    if u.shape[0] != w.size:
        raise ValueError(f"expected {w.size} coefficients, got {u.shape[0]}")
    out = np.empty((x.size,) + u.shape[1:], dtype=np.complex128)
    for s in range(0, x.size, block):
        out[s:s + block] = dense_matrix(x[s:s + block], w) @ u
    return out


def dense_adjoint(problem, f, block: int = 2048) -> np.ndarray:
    """``u_k = sum_j exp(-2*pi*i*x_j*omega_k) f_j`` by direct summation."""
    x, w = _as_problem_arrays(problem)
    f = np.asarray(f)
    if f.shape[0] != x.size:
        raise ValueError(f"expected {x.size} values, got {f.shape[0]}")
    out = np.zeros((w.size,) + f.shape[1:], dtype=np.complex128)
    for s in range(0, x.size, block):
        out += dense_matrix(x[s:s + block], w).conj().T @ f[s:s + block]
    return out


def kernel_G(x):
    """``G(x) = exp(i*pi*x) * sin(pi*x) / (pi*x)`` with ``G(0) = 1``.

    Works elementwise on arrays; scalars in give a complex scalar out.
    """
    xa = np.asarray(x, dtype=np.float64)
    small = np.abs(xa) < 1e-8
    safe = np.where(small, 1.0, xa)
    # sin(pi*x) through the reduced argument keeps integer zeros exact
    r = safe - np.rint(safe)
    sinc = np.sin(np.pi * r) * np.where(np.rint(safe) % 2 == 0, 1.0, -1.0) / (np.pi * safe)
    taylor = 1.0 - (np.pi * xa) ** 2 / 6.0
    sinc = np.where(small, taylor, sinc)
    phase = np.exp(1j * np.pi * (xa - 2.0 * np.rint(xa / 2.0)))
    out = phase * sinc
    if np.ndim(x) == 0:
        return complex(out)
    return out


def q_entry(omega, ell):
    """Expansion coefficient ``Q[l, k] = G(omega_k - l)``."""
    return kernel_G(np.asarray(omega, dtype=np.float64) - np.asarray(ell, dtype=np.float64))


def coefficient_matrix(omega, R: int = 0) -> np.ndarray:
    """Dense ``(N+2R) x N`` matrix with rows ``l = -R..N-1+R``."""
    omega = np.asarray(omega, dtype=np.float64)
    spec = CoefficientMatrixSpec(omega.size, R)
    return q_entry(omega[None, :], spec.row_index_set[:, None])


def type2_matrix(x, n_cols: int, offset: int = 0) -> np.ndarray:
    """Dense type-2 matrix ``B[j, l] = exp(2*pi*i*x_j*(l + offset))``."""
    return dense_matrix(x, np.arange(n_cols, dtype=np.float64) + offset)


def truncation_bound_frobenius(R: int) -> float:
    """Upper bound ``sqrt(2) / (pi*sqrt(R - 3/2))`` on the expected relative
    Frobenius error of the truncated expansion; valid for ``R >= 2``."""
    if R < 2:
        raise ValueError(f"bound requires R >= 2, got R={R}")
    return math.sqrt(2.0) / (math.pi * math.sqrt(R - 1.5))
