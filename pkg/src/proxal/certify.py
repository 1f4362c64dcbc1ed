"""Independent first- and second-order optimality checks.

Everything here is dense linear algebra assembled from the problem's own
evaluators (``m`` Jacobian products, ``n`` Hessian-vector products), so it
serves as an oracle for the matrix-free solver path.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import RankDeficiencyError, UnsupportedSizeError
from .problems import ensure_finite

log = logging.getLogger(__name__)

RANK_RTOL = 1e-10
DENSE_THRESHOLD = 500


@dataclass
class Certificate:
    lam: np.ndarray
    stat_norm: float
    feas_norm: float
    epsilon: float
    reduced_min_eig: float | None = None
    null_space_dim: int | None = None
    rank_tol: float | None = None

    def is_1o(self, eps=None):
        eps = self.epsilon if eps is None else eps
        return self.stat_norm <= eps and self.feas_norm <= eps

    def is_2o(self, eps=None):
        if self.reduced_min_eig is None:
            return False
        eps = self.epsilon if eps is None else eps
        return self.is_1o(eps) and self.reduced_min_eig >= -eps

    def to_dict(self):
        eig = self.reduced_min_eig
        return {
            "lambda": self.lam.tolist(),
            "stat_norm": self.stat_norm,
            "feas_norm": self.feas_norm,
            "epsilon": self.epsilon,
            "reduced_min_eig": None if eig is None else (eig if math.isfinite(eig) else "inf"),
            "null_space_dim": self.null_space_dim,
            "rank_tol": self.rank_tol,
            "is_1o": self.is_1o(),
            "is_2o": self.is_2o() if eig is not None else None,
        }


def _check_size(n, threshold):
    if n > threshold:
        raise UnsupportedSizeError(
            f"dense verification limited to n <= {threshold}, got n = {n}"
        )


def estimate_multiplier(problem, x):
    """Least-squares multiplier ``argmin ||grad f(x) + grad_c(x) lam||``."""
    x = np.asarray(x, dtype=float)
    J = problem.jacobian(x)
    s = np.linalg.svd(J, compute_uv=False)
    smax = float(s.max()) if s.size else 0.0
    smin = float(s.min()) if s.size else 0.0
    if s.size and (smax == 0.0 or smin <= RANK_RTOL * smax):
        raise RankDeficiencyError(smin, smax)
    g = ensure_finite(np.asarray(problem.grad(x), dtype=float), "gradient")
    return np.linalg.lstsq(J, -g, rcond=None)[0]


def _resolve_lambda(problem, x, lam):
    if isinstance(lam, str):
        if lam != "estimate":
            raise ValueError("lam must be an array or 'estimate'")
        return estimate_multiplier(problem, x)
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (problem.m,):
        raise ValueError("multiplier dimension does not match problem.m")
    return lam


def check_1o(problem, x, lam, eps):
    """Stationarity and feasibility residuals at ``(x, lam)``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    x = np.asarray(x, dtype=float)
    lam = _resolve_lambda(problem, x, lam)
    r = np.asarray(problem.grad(x), dtype=float)
    if problem.m:
        r = r + problem.jac_t_vec(x, lam)
    cx = np.asarray(problem.c(x), dtype=float)
    ensure_finite(r, "stationarity residual")
    ensure_finite(cx, "constraints")
    return Certificate(
        lam=lam,
        stat_norm=float(np.linalg.norm(r)),
        feas_norm=float(np.linalg.norm(cx)),
        epsilon=eps,
    )


def tangent_basis(J, rtol=RANK_RTOL):
    """Orthonormal basis of ``{d : J^T d = 0}`` for an ``n x m`` Jacobian.

    Returns ``(Z, tol)`` where ``tol`` is the absolute singular value cutoff.
    """
    n, m = J.shape
    if m == 0:
        return np.eye(n), 0.0
    _, s, Vt = np.linalg.svd(J.T)
    smax = float(s.max()) if s.size else 0.0
    tol = rtol * smax
    rank = int(np.sum(s > tol)) if smax > 0 else 0
    if rank < m:
        log.info("Jacobian rank %d < m = %d (tol %.3e)", rank, m, tol)
    return Vt[rank:].T, tol


def reduced_hessian_min_eig(H, Z):
    if Z.shape[1] == 0:
        return math.inf
    R = Z.T @ H @ Z
    return float(np.linalg.eigvalsh(0.5 * (R + R.T))[0])


def check_2o(problem, x, lam, eps, dense_threshold=DENSE_THRESHOLD):
    """First-order residuals plus the tangent-space minimum curvature.

    The Lagrangian Hessian ``hess f + sum lam_i hess c_i`` is assembled from
    ``n`` HVP calls; an empty tangent space yields ``+inf``.
    """
    _check_size(problem.n, dense_threshold)
    cert = check_1o(problem, x, lam, eps)
    x = np.asarray(x, dtype=float)
    J = problem.jacobian(x) if problem.m else np.zeros((problem.n, 0))
    Z, tol = tangent_basis(J)
    H = problem.lagrangian_hessian(x, cert.lam)
    cert.reduced_min_eig = reduced_hessian_min_eig(H, Z)
    cert.null_space_dim = Z.shape[1]
    cert.rank_tol = tol
    return cert


def subproblem_hessian(sub, x):
    n = sub.problem.n
    H = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        H[:, j] = sub.hvp(x, e)
    return 0.5 * (H + H.T)


def check_subproblem_2o(sub, x, eps_H, dense_threshold=DENSE_THRESHOLD):
    """Return ``(lambda_min(hess psi(x)) >= -eps_H, lambda_min)``."""
    _check_size(sub.problem.n, dense_threshold)
    lmin = float(np.linalg.eigvalsh(subproblem_hessian(sub, np.asarray(x, dtype=float)))[0])
    return lmin >= -eps_H, lmin
