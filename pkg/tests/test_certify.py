import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_quadratic
from proxal.auglag import ProxSubproblem
from proxal.certify import (
    Certificate,
    check_1o,
    check_2o,
    check_subproblem_2o,
    estimate_multiplier,
    reduced_hessian_min_eig,
    tangent_basis,
)
from proxal.errors import RankDeficiencyError, UnsupportedSizeError
from proxal.problems import make_linear_qp, make_quadratic, make_sphere_linear


def brute_force_reduced_min_eig(H, J):
    """Tangent-space curvature via a complete QR of the Jacobian (independent of the SVD path)."""
    n, m = J.shape
    Q, R = np.linalg.qr(J, mode="complete")
    rank = int(np.sum(np.abs(np.diag(R)) > 1e-10 * max(1.0, np.abs(R).max()))) if m else 0
    Z = Q[:, rank:]
    if Z.shape[1] == 0:
        return math.inf
    return float(np.linalg.eigvalsh(Z.T @ H @ Z)[0])


class TestEstimateMultiplier:
    def test_minimizer(self, sphere):
        assert estimate_multiplier(sphere, np.array([-1.0, 0.0]))[0] == pytest.approx(0.5)

    def test_maximizer(self, sphere):
        assert estimate_multiplier(sphere, np.array([1.0, 0.0]))[0] == pytest.approx(-0.5)

    def test_zero_jacobian(self, sphere):
        with pytest.raises(RankDeficiencyError) as info:
            estimate_multiplier(sphere, np.zeros(2))
        assert info.value.sigma_max == 0.0

    def test_never_worse_than_perturbed(self, rng):
        prob = random_quadratic(rng, 6, 3)
        x = rng.standard_normal(6)
        best = check_1o(prob, x, "estimate", 1.0).stat_norm
        lam = estimate_multiplier(prob, x)
        for _ in range(10):
            assert best <= check_1o(prob, x, lam + rng.standard_normal(3), 1.0).stat_norm + 1e-12


class TestCheck1o:
    def test_kkt(self, sphere):
        cert = check_1o(sphere, np.array([-1.0, 0.0]), np.array([0.5]), 1e-12)
        assert cert.is_1o() and (cert.stat_norm, cert.feas_norm) == (0.0, 0.0)

    def test_maximizer(self, sphere):
        assert check_1o(sphere, np.array([1.0, 0.0]), np.array([-0.5]), 1e-12).is_1o()

    def test_not_stationary(self, sphere):
        cert = check_1o(sphere, np.array([0.0, 1.0]), np.zeros(1), 0.5)
        assert cert.stat_norm == 1.0 and not cert.is_1o()

    def test_validation(self, sphere):
        with pytest.raises(ValueError):
            check_1o(sphere, np.zeros(2), np.zeros(1), 0.0)
        with pytest.raises(ValueError):
            check_1o(sphere, np.zeros(2), np.zeros(2), 0.1)
        with pytest.raises(ValueError):
            check_1o(sphere, np.zeros(2), "guess", 0.1)


class TestCheck2o:
    def test_minimizer(self, sphere):
        cert = check_2o(sphere, np.array([-1.0, 0.0]), np.array([0.5]), 1e-6)
        assert cert.reduced_min_eig == pytest.approx(1.0) and cert.is_2o()
        assert cert.null_space_dim == 1

    def test_maximizer(self, sphere):
        cert = check_2o(sphere, np.array([1.0, 0.0]), np.array([-0.5]), 0.5)
        assert cert.is_1o() and cert.reduced_min_eig == pytest.approx(-1.0) and not cert.is_2o()

    def test_empty_tangent_space(self):
        prob = make_linear_qp(-np.eye(2), np.zeros(2), np.eye(2), np.zeros(2))
        cert = check_2o(prob, np.zeros(2), np.zeros(2), 1e-8)
        assert cert.reduced_min_eig == math.inf and cert.null_space_dim == 0
        assert cert.is_2o() == cert.is_1o() is True
        assert cert.to_dict()["reduced_min_eig"] == "inf"

    def test_size_limit(self):
        prob = make_sphere_linear(20, np.ones(20))
        with pytest.raises(UnsupportedSizeError):
            check_2o(prob, np.ones(20), np.zeros(1), 0.1, dense_threshold=10)

    def test_monotone_in_epsilon(self, sphere):
        x, lam = np.array([-0.999, 0.04]), np.array([0.49])
        results = [check_2o(sphere, x, lam, e) for e in (1e-4, 1e-2, 1e-1, 1.0)]
        flags1 = [c.is_1o() for c in results]
        flags2 = [c.is_2o() for c in results]
        assert flags1 == sorted(flags1) and flags2 == sorted(flags2)
        assert flags1[-1]


def test_tangent_basis_orthonormal(rng):
    J = rng.standard_normal((7, 3))
    Z, tol = tangent_basis(J)
    assert Z.shape == (7, 4) and tol > 0
    np.testing.assert_allclose(Z.T @ Z, np.eye(4), atol=1e-12)
    np.testing.assert_allclose(J.T @ Z, 0, atol=1e-12)


def test_tangent_basis_rank_deficient():
    J = np.array([[1.0, 2.0], [1.0, 2.0], [0.0, 0.0]])
    Z, _ = tangent_basis(J)
    assert Z.shape[1] == 2


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 50), st.integers(0, 10), st.integers(0, 2**31))
def test_reduced_eig_matches_brute_force(n, m, seed):
    m = min(m, n)
    rng = np.random.default_rng(seed)
    prob = random_quadratic(rng, n, m)
    x, lam = rng.standard_normal(n), rng.standard_normal(m)
    cert = check_2o(prob, x, lam, 1e-3)
    ref = brute_force_reduced_min_eig(prob.lagrangian_hessian(x, lam), prob.jacobian(x))
    if math.isinf(ref):
        assert cert.reduced_min_eig == math.inf
    else:
        assert abs(cert.reduced_min_eig - ref) <= 1e-8


def test_reduced_hessian_min_eig_empty_basis():
    assert reduced_hessian_min_eig(np.eye(3), np.zeros((3, 0))) == math.inf


class TestSubproblem2o:
    def test_convex_qp_always_passes(self):
        prob = make_linear_qp(np.eye(2), np.zeros(2), [[1.0, 1.0]], [1.0])
        for rho, beta in [(0.1, 0.0), (100.0, 5.0)]:
            ok, lmin = check_subproblem_2o(ProxSubproblem(prob, np.zeros(1), rho, beta, np.zeros(2)), np.ones(2), 1e-12)
            assert ok and lmin >= 1.0 - 1e-12

    def test_maximizer_of_sphere_fails(self, sphere):
        sub = ProxSubproblem(sphere, np.array([-0.5]), 0.01, 0.01, np.array([1.0, 0.0]))
        ok, lmin = check_subproblem_2o(sub, np.array([1.0, 0.0]), 0.1)
        assert not ok
        # hess = -I + rho * 4 e1 e1^T + beta I  ->  diag(-0.95, -0.99)
        assert lmin == pytest.approx(-0.99)

    def test_large_proximal_shift_passes(self, sphere):
        sub = ProxSubproblem(sphere, np.array([-0.5]), 0.01, 2.0, np.zeros(2))
        assert check_subproblem_2o(sub, np.array([1.0, 0.0]), 0.1)[0]


def test_certificate_dict_round_trip():
    cert = Certificate(np.array([0.5]), 1e-9, 2e-9, 1e-6, 0.25, 1, 1e-10)
    d = cert.to_dict()
    assert d["is_1o"] and d["is_2o"] and d["lambda"] == [0.5]
    assert not Certificate(np.zeros(1), 0.0, 0.0, 1.0).is_2o()


def test_check_2o_quadratic_constraints():
    B = np.array([2.0 * np.eye(3)])
    prob = make_quadratic(np.diag([1.0, 2.0, 3.0]), np.zeros(3), np.zeros((1, 3)), [1.0], B)
    # min x^T D x / 2 on the unit sphere (||x||^2 = 1): minimizer e1 with lam = -1/2
    cert = check_2o(prob, np.array([1.0, 0.0, 0.0]), np.array([-0.5]), 1e-10)
    assert cert.is_1o() and cert.reduced_min_eig == pytest.approx(1.0)
