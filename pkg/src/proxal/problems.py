"""Equality-constrained problem interface, built-in test problems and
finite-difference derivative checks.

Problems are ``min f(x) s.t. c(x) = 0`` with ``f: R^n -> R`` and
``c: R^n -> R^m``.  The constraint Jacobian follows the ``n x m``
convention: ``jac_t_vec(x, v) = grad_c(x) @ v`` lives in ``R^n`` and
``jac_vec(x, d) = grad_c(x).T @ d`` lives in ``R^m``.  All second-order
information is exposed through Hessian-vector products of the weighted
Lagrangian ``f + w^T c``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import ConstructionError, EvaluationError, MissingConstantError

Array = np.ndarray


def ensure_finite(value, what, coordinate=None):
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise EvaluationError(f"non-finite {what}", coordinate=coordinate)
    return value


@dataclass(frozen=True)
class ProblemInstance:
    """Black-box equality-constrained problem.

    Parameters
    ----------
    n, m : int
        Decision dimension and number of equality constraints.
    f, grad : callable
        Objective value and gradient.
    c : callable
        Constraint values, ``x -> R^m``.
    jac_t_vec : callable
        ``(x, v) -> grad_c(x) v`` in ``R^n``.
    jac_vec : callable
        ``(x, d) -> grad_c(x)^T d`` in ``R^m``.
    hvp : callable
        ``(x, w, d) -> (hess f(x) + sum_i w_i hess c_i(x)) d``.
    constraint_hvp : callable, optional
        ``(x, w, d) -> sum_i w_i hess c_i(x) d``.  When omitted it is
        obtained from ``hvp`` by linearity in ``w``.
    x0 : array, optional
        Suggested starting point.
    box : (float, float)
        Evaluation box used for random sampling in derivative checks.
    """

    n: int
    m: int
    f: Callable[[Array], float]
    grad: Callable[[Array], Array]
    c: Callable[[Array], Array]
    jac_t_vec: Callable[[Array, Array], Array]
    jac_vec: Callable[[Array, Array], Array]
    hvp: Callable[[Array, Array, Array], Array]
    constraint_hvp: Callable[[Array, Array, Array], Array] | None = None
    name: str = "custom"
    metadata: dict = field(default_factory=dict)
    x0: Array | None = None
    box: tuple[float, float] = (-2.0, 2.0)

    def __post_init__(self):
        if self.n < 1:
            raise ConstructionError("n must be positive")
        if self.m < 0 or self.m > self.n:
            raise ConstructionError(f"need 0 <= m <= n, got m={self.m}, n={self.n}")

    def chvp(self, x, w, d):
        if self.constraint_hvp is not None:
            return self.constraint_hvp(x, w, d)
        return self.hvp(x, w, d) - self.hvp(x, np.zeros(self.m), d)

    def jacobian(self, x):
        """Dense ``n x m`` Jacobian assembled from ``m`` unit-vector products."""
        J = np.empty((self.n, self.m))
        for i in range(self.m):
            e = np.zeros(self.m)
            e[i] = 1.0
            J[:, i] = self.jac_t_vec(x, e)
        return ensure_finite(J, "constraint Jacobian")

    def lagrangian_hessian(self, x, w):
        """Dense ``hess f + sum w_i hess c_i`` from ``n`` HVP calls (symmetrized)."""
        H = np.empty((self.n, self.n))
        for j in range(self.n):
            e = np.zeros(self.n)
            e[j] = 1.0
            H[:, j] = self.hvp(x, w, e)
        ensure_finite(H, "Lagrangian Hessian")
        return 0.5 * (H + H.T)


def _rel_err(approx, ref):
    approx = np.atleast_1d(approx)
    ref = np.atleast_1d(ref)
    if ref.size == 0:
        return 0.0
    return float(np.max(np.abs(approx - ref) / (1.0 + np.abs(ref))))


def fd_check_gradient(problem, x, h=1e-6):
    """Max relative error of ``grad`` and the Jacobian against central differences.

    The relative-error denominator is ``1 + |reference|`` where the reference
    is the analytic derivative.
    """
    if not 0.0 < h <= 1e-2:
        raise ValueError("h must lie in (0, 1e-2]")
    x = np.asarray(x, dtype=float)
    ensure_finite(x, "input point")
    g = ensure_finite(problem.grad(x), "gradient")
    J = problem.jacobian(x) if problem.m else np.zeros((problem.n, 0))
    fd_g = np.empty(problem.n)
    fd_J = np.empty((problem.n, problem.m))
    for i in range(problem.n):
        e = np.zeros(problem.n)
        e[i] = h
        fp = ensure_finite(problem.f(x + e), "objective", coordinate=i)
        fm = ensure_finite(problem.f(x - e), "objective", coordinate=i)
        fd_g[i] = (fp - fm) / (2 * h)
        if problem.m:
            cp = ensure_finite(problem.c(x + e), "constraints", coordinate=i)
            cm = ensure_finite(problem.c(x - e), "constraints", coordinate=i)
            fd_J[i, :] = (cp - cm) / (2 * h)
    return max(_rel_err(fd_g, g), _rel_err(fd_J.ravel(), J.ravel()))


def fd_check_hvp(problem, x, w, d, h=1e-6):
    """Max relative error of the weighted-Lagrangian HVP against central
    differences of ``x -> grad f(x) + grad_c(x) w``."""
    if not 0.0 < h <= 1e-2:
        raise ValueError("h must lie in (0, 1e-2]")
    d = np.asarray(d, dtype=float)
    if abs(np.linalg.norm(d) - 1.0) > 1e-10:
        raise ValueError("direction d must have unit norm")
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)

    def lag_grad(z):
        out = np.asarray(problem.grad(z), dtype=float)
        if problem.m:
            out = out + problem.jac_t_vec(z, w)
        return ensure_finite(out, "Lagrangian gradient")

    Hd = ensure_finite(problem.hvp(x, w, d), "Hessian-vector product")
    fd = (lag_grad(x + h * d) - lag_grad(x - h * d)) / (2 * h)
    return _rel_err(Hd, fd)


# ---------------------------------------------------------------------------
# built-in problems


def make_sphere_linear(n, b):
    """``min b^T x  s.t.  ||x||^2 - 1 = 0``.

    Global minimizer ``-b/||b||`` with multiplier ``||b||/2``.
    """
    b = np.asarray(b, dtype=float).copy()
    if n < 2 or b.shape != (n,):
        raise ConstructionError("sphere_linear needs n >= 2 and b in R^n")
    if np.linalg.norm(b) == 0.0:
        raise ConstructionError("b must be nonzero")
    x0 = np.zeros(n)
    x0[1] = 1.0

    return ProblemInstance(
        n=n,
        m=1,
        f=lambda x: float(b @ x),
        grad=lambda x: b.copy(),
        c=lambda x: np.array([x @ x - 1.0]),
        jac_t_vec=lambda x, v: 2.0 * v[0] * x,
        jac_vec=lambda x, d: np.array([2.0 * (x @ d)]),
        hvp=lambda x, w, d: 2.0 * w[0] * d,
        constraint_hvp=lambda x, w, d: 2.0 * w[0] * d,
        name="sphere_linear",
        metadata={"n": n, "b": b.tolist()},
        x0=x0,
    )


def make_quadratic(Q, p, A, b, B=None, name="quadratic"):
    """``f = x^T Q x / 2 - p^T x``, ``c_i = x^T B_i x / 2 + a_i^T x - b_i``.

    ``A`` is ``m x n`` (rows ``a_i``) and ``B`` an optional ``m x n x n``
    stack of symmetric constraint Hessians.
    """
    Q = np.asarray(Q, dtype=float)
    p = np.asarray(p, dtype=float)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    m, n = A.shape
    if Q.shape != (n, n) or p.shape != (n,) or b.shape != (m,):
        raise ConstructionError("inconsistent quadratic problem dimensions")
    if not np.allclose(Q, Q.T):
        raise ConstructionError("Q must be symmetric")
    if B is None:
        B = np.zeros((m, n, n))
        linear = True
    else:
        B = np.asarray(B, dtype=float)
        linear = not np.any(B)
    if B.shape != (m, n, n):
        raise ConstructionError("B must have shape (m, n, n)")

    def jac(x):  # n x m
        return (B @ x).T + A.T

    return ProblemInstance(
        n=n,
        m=m,
        f=lambda x: float(0.5 * x @ Q @ x - p @ x),
        grad=lambda x: Q @ x - p,
        c=lambda x: 0.5 * np.einsum("i,kij,j->k", x, B, x) + A @ x - b,
        jac_t_vec=lambda x, v: jac(x) @ v,
        jac_vec=lambda x, d: jac(x).T @ d,
        hvp=lambda x, w, d: Q @ d + np.einsum("k,kij,j->i", w, B, d),
        constraint_hvp=lambda x, w, d: np.einsum("k,kij,j->i", w, B, d),
        name=name,
        metadata={"linear_constraints": linear},
        x0=np.zeros(n),
    )


def make_linear_qp(Q, p, A, b):
    """``f = x^T Q x / 2 - p^T x``, ``c = A x - b`` with ``A`` of full row rank."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    s = np.linalg.svd(A, compute_uv=False)
    if s.size == 0 or s.min() <= 1e-10:
        raise ConstructionError(
            "A must have full row rank (smallest singular value "
            f"{0.0 if s.size == 0 else s.min():.3e} <= 1e-10)"
        )
    prob = make_quadratic(Q, p, A, b, name="linear_qp")
    # a feasible start: least-norm solution of A x = b
    x0 = np.linalg.lstsq(A, np.atleast_1d(np.asarray(b, dtype=float)), rcond=None)[0]
    return replace(prob, x0=x0)


def make_rosenbrock_sphere(n):
    """Chained Rosenbrock on the sphere of radius ``sqrt(n)``.

    The all-ones point is feasible and a global minimizer.
    """
    if n < 2 or n % 2:
        raise ConstructionError("rosenbrock_sphere needs an even n >= 2")
    r2 = float(n)

    def f(x):
        a, b = x[0::2], x[1::2]
        return float(np.sum(100.0 * (b - a**2) ** 2 + (1.0 - a) ** 2))

    def grad(x):
        a, b = x[0::2], x[1::2]
        g = np.empty_like(x)
        g[0::2] = -400.0 * a * (b - a**2) - 2.0 * (1.0 - a)
        g[1::2] = 200.0 * (b - a**2)
        return g

    def hess_f_vec(x, d):
        a, b = x[0::2], x[1::2]
        da, db = d[0::2], d[1::2]
        out = np.empty_like(d)
        out[0::2] = (1200.0 * a**2 - 400.0 * b + 2.0) * da - 400.0 * a * db
        out[1::2] = -400.0 * a * da + 200.0 * db
        return out

    # classic (-1.2, 1) start projected onto the sphere
    x0 = np.tile([-1.2, 1.0], n // 2)
    x0 *= np.sqrt(r2) / np.linalg.norm(x0)
    return ProblemInstance(
        n=n,
        m=1,
        f=f,
        grad=grad,
        c=lambda x: np.array([x @ x - r2]),
        jac_t_vec=lambda x, v: 2.0 * v[0] * x,
        jac_vec=lambda x, d: np.array([2.0 * (x @ d)]),
        hvp=lambda x, w, d: hess_f_vec(x, d) + 2.0 * w[0] * d,
        constraint_hvp=lambda x, w, d: 2.0 * w[0] * d,
        name="rosenbrock_sphere",
        metadata={"n": n},
        x0=x0,
        box=(-1.5, 1.5),
    )


def make_infeasible_demo(n=2):
    """``f = 0``, ``c(x) = x_1^2 + 1``: no feasible point, critical point of
    ``||c||^2`` at ``x_1 = 0``."""

    def jac_col(x):
        col = np.zeros(n)
        col[0] = 2.0 * x[0]
        return col

    def chvp(x, w, d):
        out = np.zeros(n)
        out[0] = 2.0 * w[0] * d[0]
        return out

    return ProblemInstance(
        n=n,
        m=1,
        f=lambda x: 0.0,
        grad=lambda x: np.zeros(n),
        c=lambda x: np.array([x[0] ** 2 + 1.0]),
        jac_t_vec=lambda x, v: jac_col(x) * v[0],
        jac_vec=lambda x, d: np.array([jac_col(x) @ d]),
        hvp=chvp,
        constraint_hvp=chvp,
        name="infeasible_demo",
        x0=np.zeros(n),
    )


def _sphere_linear_from_params(n=2, b=None):
    if b is None:
        b = np.zeros(n)
        b[0] = 1.0
    return make_sphere_linear(n, b)


def _linear_qp_from_params(Q=None, p=None, A=None, b=None):
    if Q is None:
        Q, p, A, b = np.eye(2), np.zeros(2), [[1.0, 1.0]], [1.0]
    Q = np.asarray(Q, dtype=float)
    if p is None:
        p = np.zeros(Q.shape[0])
    return make_linear_qp(Q, p, A, b)


PROBLEMS = {
    "sphere_linear": _sphere_linear_from_params,
    "linear_qp": _linear_qp_from_params,
    "rosenbrock_sphere": lambda n=2: make_rosenbrock_sphere(n),
    "infeasible_demo": lambda n=2: make_infeasible_demo(n),
}


def build_problem(name, params=None):
    """Instantiate a built-in problem by registry name."""
    try:
        factory = PROBLEMS[name]
    except KeyError:
        raise ConstructionError(
            f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}"
        ) from None
    try:
        return factory(**(params or {}))
    except TypeError as exc:
        raise ConstructionError(f"bad parameters for {name!r}: {exc}") from None


def register_problem(name, factory):
    """Make a custom problem factory selectable by name."""
    PROBLEMS[name] = factory


@dataclass(frozen=True)
class ConstantsLedger:
    """Problem constants used by the penalty threshold formula.

    Every field may be ``None`` (unknown).  ``lam_min``/``lam_max`` are the
    safeguard box of the classical method.
    """

    M_f: float | None = None
    L_f: float | None = None
    M_c: float | None = None
    L_c: float | None = None
    sigma: float | None = None
    rho0: float | None = None
    C0: float | None = None
    R: float | None = None
    lam_min: float | None = None
    lam_max: float | None = None

    def __post_init__(self):
        for name in ("M_f", "L_f", "M_c", "L_c", "rho0", "C0"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ConstructionError(f"{name} must be nonnegative")
        if self.sigma is not None and not self.sigma > 0:
            raise ConstructionError("sigma must be positive")
        if self.R is not None and self.R < 1:
            raise ConstructionError("R must be at least 1")

    def require(self, name):
        v = getattr(self, name)
        if v is None:
            raise MissingConstantError(name)
        return v
