"""Small worked cases with known answers, one or two per public operation."""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from fastinudft import experiments as ex
from fastinudft.hss import (HssMatrix, blackbox_compress, build_tree, hss_adjoint_matvec,
                            hss_matvec, hss_to_dense, nullspace_projector, random_hss)
from fastinudft.inudft import build_type2, build_type3
from fastinudft.iterative import cg_normal, pcg_normal
from fastinudft.problem import (NudftProblem, PointDistribution, dense_adjoint, dense_forward,
                                dense_matrix, generate_points, kernel_G, make_rng, q_entry,
                                truncation_bound_frobenius, type2_matrix)
from fastinudft.transforms import Type2Plan, Type3Plan, UniformTransformPlan
from fastinudft.urv import urv_factorize, urv_solve, urv_to_dense

from conftest import crandn, relerr
from hss_oracle import assemble


# ------------------------------------------------------------------ problem


def test_zero_perturbation_grid():
    p = generate_points(PointDistribution("pp", 0.0, 0.0, 3), 8, 4)
    assert_array_equal(p.sample_points, np.arange(8) / 8)
    assert_array_equal(p.frequencies, np.arange(4))


def test_trivial_transforms():
    one = NudftProblem([0.0], [0.0])
    assert_allclose(dense_forward(one, [1.0]), [1.0])
    assert_allclose(dense_adjoint(one, [1.0]), [1.0])
    grid = NudftProblem(np.arange(8) / 8, np.arange(8.0))
    e0 = np.eye(8)[0]
    assert_allclose(dense_forward(grid, e0), np.ones(8))


def test_dense_forward_reversed_double_sum(rng):
    prob = generate_points(PointDistribution("rp", 0.3, 0.0, 9), 32, 8)
    u = crandn(rng, 8)
    ref = np.zeros(32, dtype=complex)
    for k in reversed(range(8)):
        ref += np.exp(2j * np.pi * prob.sample_points * prob.frequencies[k]) * u[k]
    assert_allclose(dense_forward(prob, u), ref, atol=1e-13)


def test_kernel_G_symmetry_and_q_entry(rng):
    x = rng.uniform(-20, 20, 50)
    assert_allclose(kernel_G(-x), np.conj(kernel_G(x)), atol=1e-15)
    assert_allclose(kernel_G(np.arange(1, 30)), 0, atol=1e-15)
    assert_allclose(q_entry(5.0, np.arange(10)), np.eye(10)[5], atol=1e-15)
    for w in rng.uniform(-0.5, 0.5, 5):  # window -T..T covers w with margin T
        for T in (2, 10, 100):
            s = np.sum(np.abs(q_entry(w, np.arange(-T, T + 1))) ** 2)
            assert 1 - 2 / (math.pi**2 * (T - 1.5)) <= s <= 1 + 1e-12


def test_bound_values():
    assert truncation_bound_frobenius(2) == pytest.approx(2 / math.pi)
    assert truncation_bound_frobenius(16) == pytest.approx(math.sqrt(2) / (math.pi * math.sqrt(14.5)))


# --------------------------------------------------------------- transforms


def test_uniform_transform_cases():
    p = UniformTransformPlan(4)
    assert_allclose(p.forward(np.eye(4)[0]), np.ones(4))
    assert_allclose(p.forward(np.ones(4)), [4, 0, 0, 0], atol=1e-15)
    assert_allclose(p.inverse(np.ones(4)), np.eye(4)[0], atol=1e-15)


def test_type2_equispaced_is_conjugate_dft(rng):
    n = 16
    u = crandn(rng, n)
    p = Type2Plan(np.arange(n) / n, n, 1e-12)
    Fp = np.exp(2j * np.pi * np.outer(np.arange(n), np.arange(n)) / n)
    assert relerr(p.forward(u), Fp @ u) < 1e-12
    assert relerr(p.forward(u), n * UniformTransformPlan(n).inverse(u)) < 1e-12


def test_single_point_transforms(rng):
    x0 = 0.3716
    u = crandn(rng, 40)
    p = Type2Plan([x0], 40, 1e-12)
    assert p.forward(u)[0] == pytest.approx(np.sum(u * np.exp(2j * np.pi * x0 * np.arange(40))))
    assert_allclose(p.adjoint([1.0]), np.exp(-2j * np.pi * x0 * np.arange(40)), atol=1e-12)
    q = Type3Plan([x0], [2.25], 1e-12)
    assert q.forward([1.0])[0] == pytest.approx(np.exp(2j * np.pi * x0 * 2.25))


@pytest.mark.parametrize("kind", ["type2", "type3"])
def test_n512_tolerance(rng, kind):
    prob = generate_points(PointDistribution("rp", 0.4, 0.0, 1), 2048, 512)
    x = prob.sample_points
    if kind == "type2":
        plan, A = Type2Plan(x, 512, 1e-10), type2_matrix(x, 512)
    else:
        plan, A = Type3Plan(x, prob.frequencies, 1e-10), dense_matrix(x, prob.frequencies)
    u = crandn(rng, 512)
    assert relerr(plan.forward(u), A @ u) <= 1e-10


# ---------------------------------------------------------------------- hss


def test_tree_shapes():
    assert build_tree(128, 128, 128).levels == 0
    t = build_tree(512, 512, 128)
    assert t.levels == 2 and [t.n_rows(i) for i in t.leaves()] == [128] * 4
    t = build_tree(1024, 256, 128)
    assert all(t.n_rows(i) <= 256 and t.n_cols(i) <= 256 for i in t.leaves())


def identity_like(n, leaf):
    A = random_hss(build_tree(n, n, leaf), 3, seed=0)
    for t in A.tree.leaves():
        A.D[t] = np.eye(A.tree.n_rows(t), dtype=complex)
    A.B12 = [None if b is None else 0 * b for b in A.B12]
    A.B21 = [None if b is None else 0 * b for b in A.B21]
    return A


def test_identity_like_and_zero_hss(rng):
    A = identity_like(256, 32)
    v = crandn(rng, 256)
    assert_allclose(hss_matvec(A, v), v)
    assert_allclose(hss_adjoint_matvec(A, v), v)
    assert_allclose(urv_solve(urv_factorize(A), v), v, atol=1e-13)
    Z = random_hss(build_tree(64, 64, 16), 2, seed=1)
    Z.D = [None if d is None else 0 * d for d in Z.D]
    Z.B12 = [None if b is None else 0 * b for b in Z.B12]
    Z.B21 = [None if b is None else 0 * b for b in Z.B21]
    assert not hss_matvec(Z, v[:64]).any()


def test_single_leaf_dense():
    A = random_hss(build_tree(50, 40, 64), 4, seed=2)
    assert_array_equal(hss_to_dense(A), A.D[1])


def test_nullspace_edge_cases(rng):
    P = nullspace_projector(np.zeros((4, 12)), 5)
    assert_allclose(P.conj().T @ P, np.eye(5), atol=1e-13)
    Om = crandn(rng, 4, 12)
    P = nullspace_projector(Om, 8)  # r = s - s'
    assert np.linalg.norm(Om @ P) <= 1e-12 * np.linalg.norm(Om)
    with pytest.raises(ValueError):
        nullspace_projector(Om, 9)


def test_compress_zero_and_low_rank(rng):
    tree = build_tree(1024, 1024, 128)
    Z = blackbox_compress(lambda X: 0 * X, lambda Y: 0 * Y, 1024, 1024, tree, 18)
    assert not hss_to_dense(Z).any()
    A = assemble(random_hss(tree, 8, seed=3))
    H = blackbox_compress(lambda X: A @ X, lambda Y: A.conj().T @ Y, 1024, 1024, tree, 18,
                          s=max(18 + 128, 54))
    assert relerr(hss_to_dense(H), A) <= 1e-10
    small = build_tree(256, 256, 32)
    L = crandn(rng, 256, 5) @ crandn(rng, 5, 256)
    H = blackbox_compress(lambda X: L @ X, lambda Y: L.conj().T @ Y, 256, 256, small, 15)
    assert relerr(hss_to_dense(H), L) <= 1e-10


# ---------------------------------------------------------------------- urv


@pytest.mark.parametrize("shape", [(512, 512), (1024, 256)])
def test_urv_dense_equivalence_and_consistent_solve(rng, shape):
    A = random_hss(build_tree(*shape, 64), 8, seed=shape[1])
    Ad = assemble(A)
    fact = urv_factorize(A)
    assert relerr(urv_to_dense(fact), Ad) <= 1e-11
    u0 = crandn(rng, shape[1])
    assert relerr(urv_solve(fact, Ad @ u0), u0) <= 1e-11


# ------------------------------------------------------------------- inudft


def test_type2_equispaced_structure_is_identity(rng):
    n = 256
    x = np.arange(n) / n
    s = build_type2(x, n, rho=1e-12)
    # B = Fp exactly, so At = B Fp^{-1} = I up to the row order
    At = hss_to_dense(s.A_tilde_hss)
    P = np.eye(n)[s.perm]
    assert relerr(At, P) <= 1e-10
    u = crandn(rng, n)
    assert relerr(s.pinv(s.apply(u)), u) <= 1e-10


@pytest.fixture(scope="module")
def pp512():
    return generate_points(PointDistribution("pp", 0.0, 0.4, 0), 2048, 512)


def test_type2_structure_matches_dense(pp512):
    x, n = pp512.sample_points, 512
    Fp = np.exp(2j * np.pi * np.outer(np.arange(n), np.arange(n)) / n)
    At = (type2_matrix(x, n) @ np.linalg.inv(Fp))
    errs = {}
    for rho in (1e-7, 1e-12):
        s = build_type2(x, n, rho=rho)
        errs[rho] = relerr(hss_to_dense(s.A_tilde_hss), At[s.perm])
    assert errs[1e-12] <= 1e-9
    assert errs[1e-12] < errs[1e-7]
    s = build_type2(x, n, rho=1e-12)
    assert not s.apply(np.zeros(n)).any()
    u0 = crandn(make_rng(1), n)
    assert relerr(s.pinv(s.apply(u0)), u0) <= 100 * 1e-12


def test_type3_integer_frequencies(pp512, rng):
    s = build_type3(pp512, rho=1e-12)  # alpha = 0: omega_k = k
    perm = s.col_perm
    H = hss_to_dense(s.H_hss)[np.argsort(perm)][:, np.argsort(perm)]
    assert np.linalg.norm(H - np.eye(512)) / math.sqrt(512) <= 1e-6
    t2 = build_type2(pp512.sample_points, 512, rho=1e-12)
    u = crandn(rng, 512)
    assert relerr(s.apply(u), t2.apply(u)) <= 1e-5
    f = crandn(rng, 2048)
    assert relerr(s.solve(f), t2.pinv(f)) <= 1e-5
    assert not s.solve(np.zeros(2048)).any()
    assert not s.apply(np.zeros(512)).any()


@pytest.fixture(scope="module")
def rp1024():
    prob = generate_points(PointDistribution("rp", 0.1, 0.0, 0), 4096, 1024)
    return prob, build_type3(prob, rho=1e-12)


def test_type3_approximation_error(rp1024):
    prob, s = rp1024
    err = ex.estimate_relative_frobenius_error(lambda G: dense_forward(prob, G), s.apply, 1024)
    assert err <= 0.1
    s16 = build_type3(prob, rho=1e-12, R=16, b_fast=None)
    err16 = ex.estimate_relative_frobenius_error(lambda G: dense_forward(prob, G), s16.apply, 1024)
    assert err16 <= truncation_bound_frobenius(16)
    u = crandn(make_rng(4), 1024)
    assert relerr(s.apply(u), dense_forward(prob, u)) <= 3 * err + 10 * 1e-12


def test_estimator_stability(rp1024):
    prob, s = rp1024
    ests = [ex.estimate_relative_frobenius_error(lambda G: dense_forward(prob, G), s.apply, 1024,
                                                 seed=k) for k in range(5)]
    assert max(ests) <= 1.2 * min(ests)
    assert ex.estimate_relative_frobenius_error(s.apply, s.apply, 1024) == 0.0


def test_estimator_known_perturbation(rng):
    A = crandn(rng, 64, 32)
    E = 0.01 * crandn(rng, 64, 32)
    truth = np.linalg.norm(E) / np.linalg.norm(A)
    ests = [ex.estimate_relative_frobenius_error(lambda G: A @ G, lambda G: (A + E) @ G, 32,
                                                 seed=k) for k in range(40)]
    se = np.std(ests) / math.sqrt(len(ests))
    assert abs(np.mean(ests) - truth) <= 3 * se + 0.01 * truth


def test_preconditioner_on_normal_equations():
    prob = generate_points(PointDistribution("rp", 0.4, 0.0, 2), 1024, 256)
    s = build_type3(prob, rho=1e-12, leaf_size=64)
    A = dense_matrix(prob.sample_points, prob.frequencies)
    u = crandn(make_rng(3), 256)
    err = ex.estimate_relative_frobenius_error(lambda G: A @ G, s.apply, 256)
    assert relerr(s.precondition(A.conj().T @ (A @ u)), u) <= 10 * err


# ---------------------------------------------------------------- iterative


def test_cg_pp_small_perturbation_iterations():
    prob = generate_points(PointDistribution("pp", 1e-7, 0.4, 0), 16384, 4096)
    plan, f = ex._rhs(prob, 0)
    _, rep = cg_normal(plan.forward, plan.adjoint, f)
    assert 9 <= rep.iterations <= 15


def test_pcg_pp_small_perturbation_iterations():
    c = ex.ExperimentConfig(command="iterative-compare").resolved()
    prob = ex._problem(c, "pp", 16384, 1e-7, 0)
    plan, f = ex._rhs(prob, 0)
    s = ex._build(c, prob, 1e-7)
    _, rep = pcg_normal(plan.forward, plan.adjoint, s.precondition, f)
    assert rep.converged and rep.iterations <= 4
