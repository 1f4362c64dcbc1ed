import numpy as np
import pytest

from proxal.problems import (
    make_infeasible_demo,
    make_linear_qp,
    make_quadratic,
    make_rosenbrock_sphere,
    make_sphere_linear,
)


def builtin_problems():
    return [
        make_sphere_linear(2, np.array([1.0, 0.0])),
        make_sphere_linear(5, np.array([1.0, -2.0, 0.5, 0.0, 3.0])),
        make_linear_qp(np.eye(2), np.zeros(2), [[1.0, 1.0]], [1.0]),
        make_linear_qp(np.diag([1.0, -1.0]), np.zeros(2), [[0.0, 1.0]], [0.0]),
        make_rosenbrock_sphere(4),
        make_infeasible_demo(3),
        random_quadratic(np.random.default_rng(7), 6, 2),
    ]


def random_quadratic(rng, n, m, quadratic_constraints=True):
    """Random nonconvex objective with (optionally) quadratic equality constraints."""
    Q = rng.standard_normal((n, n))
    Q = 0.5 * (Q + Q.T)
    p = rng.standard_normal(n)
    A = rng.standard_normal((m, n))
    b = rng.standard_normal(m)
    B = None
    if quadratic_constraints and m:
        B = rng.standard_normal((m, n, n))
        B = 0.5 * (B + np.transpose(B, (0, 2, 1)))
    return make_quadratic(Q, p, A, b, B)


def random_coercive(rng, n, m):
    """Nonconvex objective with ``m >= 1`` quadratic constraints, the first a sphere.

    The squared sphere residual grows like ``||x||^4``, so every augmented
    Lagrangian subproblem is bounded below while the objective stays indefinite.
    """
    from dataclasses import replace

    Q = rng.standard_normal((n, n))
    Q = 0.5 * (Q + Q.T)
    p = rng.standard_normal(n)
    A = rng.standard_normal((m, n))
    A[0] = 0.0
    b = rng.standard_normal(m)
    b[0] = 1.0
    B = rng.standard_normal((m, n, n))
    B = 0.5 * (B + np.transpose(B, (0, 2, 1)))
    B[0] = 2.0 * np.eye(n)
    prob = make_quadratic(Q, p, A, b, B, name="coercive_quadratic")
    return replace(prob, box=(-1.5, 1.5))


def random_point(problem, rng):
    lo, hi = problem.box
    return rng.uniform(lo, hi, problem.n)


def unit(rng, n):
    d = rng.standard_normal(n)
    return d / np.linalg.norm(d)


@pytest.fixture
def sphere():
    return make_sphere_linear(2, np.array([1.0, 0.0]))


@pytest.fixture
def qp():
    return make_linear_qp(np.eye(2), np.zeros(2), [[1.0, 1.0]], [1.0])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
