import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from fastinudft.problem import (CoefficientMatrixSpec, DistributionCase, NudftProblem,
                                PointDistribution, coefficient_matrix, dense_adjoint,
                                dense_forward, dense_matrix, expi2pi_product,
                                generate_points, kernel_G, type2_matrix,
                                truncation_bound_frobenius)

from conftest import crandn


def mp_expi2pi(a, b):
    mpmath.mp.dps = 40
    v = mpmath.expjpi(2 * mpmath.mpf(float(a)) * mpmath.mpf(float(b)))
    return complex(v)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.0, 1.0, exclude_max=True), st.floats(-0.5, 2.0**20))
def test_expi2pi_matches_high_precision(a, b):
    # large products lose digits in a naive exp(2*pi*i*a*b)
    assert abs(expi2pi_product(a, b) - mp_expi2pi(a, b)) < 1e-15


def test_dense_matrix_small_products_match_naive():
    x = np.linspace(0, 1, 7, endpoint=False)
    w = np.arange(5) + 0.3
    assert_allclose(dense_matrix(x, w), np.exp(2j * np.pi * np.outer(x, w)), atol=1e-14)


def test_dense_forward_adjoint_blocks(rng):
    prob = generate_points(PointDistribution("rp", 0.3, 0.0, 3), 50, 20)
    A = np.exp(2j * np.pi * np.outer(prob.sample_points, prob.frequencies))
    u = crandn(rng, 20, 3)
    f = crandn(rng, 50)
    assert_allclose(dense_forward(prob, u, block=7), A @ u, atol=1e-12)
    assert_allclose(dense_adjoint(prob, f, block=7), A.conj().T @ f, atol=1e-12)
    with pytest.raises(ValueError):
        dense_forward(prob, np.ones(19))


@pytest.mark.parametrize("case", ["pp", "rp"])
def test_generate_points_ranges_and_determinism(case):
    d = PointDistribution(case, alpha=0.4, beta=0.4, seed=11)
    p1 = generate_points(d, 400, 100)
    p2 = generate_points(d, 400, 100)
    assert_array_equal(p1.sample_points, p2.sample_points)
    x, w = p1.sample_points, p1.frequencies
    assert x.min() >= 0 and x.max() < 1
    assert np.all(np.abs(w - np.arange(100)) <= 0.4)
    if case == "pp":
        assert np.all(np.abs(x * 400 - np.arange(400)) <= 0.4 + 1e-12)
        assert np.all(np.diff(x) > 0)


def test_point_distribution_validation():
    assert PointDistribution("random-perturbation").case is DistributionCase.RANDOM_PERTURBATION
    for bad in (dict(alpha=0.5), dict(beta=-0.1), dict(seed=-1)):
        with pytest.raises(ValueError):
            PointDistribution("pp", **bad)
    with pytest.raises(ValueError):
        PointDistribution("uniform")


def test_problem_validation():
    with pytest.raises(ValueError):
        NudftProblem(np.array([0.1]), np.array([0.0, 1.0]))  # M < N
    with pytest.raises(ValueError):
        NudftProblem(np.array([0.1, 1.0]), np.array([0.0]))  # x outside [0, 1)
    with pytest.raises(ValueError):
        NudftProblem(np.array([0.1, 0.2]), np.array([0.0, 1.6]))  # omega >= N - 1/2
    p = NudftProblem([0.0, 0.5], [-0.5, 1.2])
    assert (p.M, p.N) == (2, 2)
    with pytest.raises(ValueError):
        p.sample_points[0] = 0.3


def test_kernel_G_against_sinc():
    x = np.concatenate([np.linspace(-40, 40, 801), [0.0, 1e-10, -3.0, 7.0]])
    ref = np.exp(1j * np.pi * x) * np.sinc(x)
    assert_allclose(kernel_G(x), ref, atol=1e-14)
    assert kernel_G(0.0) == 1.0
    assert abs(kernel_G(5.0)) < 1e-16


def test_coefficient_matrix_rows_and_identity_at_integers():
    w = np.arange(6, dtype=float)
    Q = coefficient_matrix(w, R=2)
    assert Q.shape == (10, 6)
    # integer frequencies: Q is the identity embedded at rows l = k
    assert_allclose(Q[2:8], np.eye(6), atol=1e-15)
    assert_allclose(Q[:2], 0, atol=1e-15)
    spec = CoefficientMatrixSpec(6, 2)
    assert_array_equal(spec.row_index_set, np.arange(-2, 8))
    assert spec.n_rows == 10


def test_coefficient_expansion_reproduces_A():
    # columns of A are exp(2 pi i x w) = sum_l G(w - l) exp(2 pi i x l) over all l
    x = np.array([0.05, 0.31, 0.77])
    w = np.array([2.3])
    R = 4000
    Q = coefficient_matrix(w, R=R)
    B = type2_matrix(x, 1 + 2 * R, offset=-R)
    assert_allclose(B @ Q, dense_matrix(x, w), atol=2e-3)


def test_truncation_bound():
    assert truncation_bound_frobenius(16) == pytest.approx(math.sqrt(2) / (math.pi * math.sqrt(14.5)))
    with pytest.raises(ValueError):
        truncation_bound_frobenius(1)
