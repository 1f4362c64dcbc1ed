"""Matrix-free Newton-CG for smooth nonconvex unconstrained minimization.

The solver returns a point with ``||grad F|| <= eps_g`` and, in
second-order mode, a randomized certificate ``hess F >= -eps_H I``.  It
uses only gradient evaluations and Hessian-vector products:

* a capped conjugate gradient run on the shifted system
  ``(H + 2 eps_H I) d = -g`` that either returns an inexact Newton step or
  a direction of curvature below ``-eps_H``;
* a Lanczos minimum-eigenvalue oracle, called once the gradient is small;
* backtracking line searches that keep ``F`` nonincreasing.

Every Hessian-vector product is counted so totals can be compared with
the per-iteration envelope ``max(2 min(n, J) + 2, N_meo)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import EvaluationError

log = logging.getLogger(__name__)

ARMIJO = 1e-4
MAX_BACKTRACKS = 60
POWER_ITERS = 10
L_H_MIN = 1e-8

FIRST_ORDER_MET = "first_order_met"
SECOND_ORDER_MET = "second_order_met"
BUDGET_EXHAUSTED = "budget_exhausted"


@dataclass(frozen=True)
class InnerTolerances:
    eps_g: float
    eps_H: float
    delta: float = 1e-3
    zeta: float = 0.5
    max_iters: int = 1000
    max_hvps: int = 500_000

    def __post_init__(self):
        if not (self.eps_g > 0 and self.eps_H > 0):
            raise ValueError("eps_g and eps_H must be positive")
        if not (0 < self.delta < 1 and 0 < self.zeta < 1):
            raise ValueError("delta and zeta must lie in (0, 1)")
        if self.max_iters < 1 or self.max_hvps < 1:
            raise ValueError("iteration and HVP budgets must be at least 1")


@dataclass
class InnerResult:
    z: np.ndarray
    value: float
    grad_norm: float
    decrease: float
    iterations: int
    hvp_count: int
    meo_calls: int
    status: str
    neg_curvature_certified_absent: bool
    u_est: float = 0.0
    message: str = ""
    trace: list = field(default_factory=list)


@dataclass
class SmoothFunction:
    """Bundle of ``value``, ``gradient`` and ``hvp(z, d)`` callables."""

    value: Callable
    gradient: Callable
    hvp: Callable


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _finite(v, what):
    if not np.all(np.isfinite(v)):
        raise EvaluationError(f"non-finite {what} in Newton-CG")
    return v


# ---------------------------------------------------------------------------
# complexity bookkeeping


def condition_bound(u_est, eps_H):
    return (u_est + 2.0 * eps_H) / eps_H


def j_bound(u_est, eps_H, zeta, n):
    """Upper bound on capped-CG iterations, ``min{n, ceil((sqrt k + 1/2) log(144 (sqrt k + 1)^2 k^6 / zeta^2))}``."""
    kappa = condition_bound(u_est, eps_H)
    sk = math.sqrt(kappa)
    val = (sk + 0.5) * math.log(144.0 * (sk + 1.0) ** 2 * kappa**6 / zeta**2)
    return min(n, math.ceil(val))


def meo_constant(n, delta, u_est):
    """Lanczos iteration constant; ``N_meo = 1 + ceil(C / sqrt(eps_H))`` below ``n``.

    Scales with ``sqrt(max(U, 1))`` so the oracle stays reliable when the
    Hessian norm is large (large penalty parameters).
    """
    return 0.5 * math.log(2.75 * n / delta**2) * math.sqrt(max(u_est, 1.0))


def n_meo(n, eps_H, delta, u_est=1.0):
    return min(n, 1 + math.ceil(meo_constant(n, delta, u_est) / math.sqrt(eps_H)))


def hvp_envelope(n, u_est, eps_H, zeta, delta, iterations):
    """Corollary-style bound on Hessian-vector products for ``iterations`` passes."""
    per_iter = max(2 * j_bound(u_est, eps_H, zeta, n) + 2, n_meo(n, eps_H, delta, u_est))
    return per_iter * iterations


def power_norm_estimate(hvp, n, rng, iters=POWER_ITERS):
    """Lower estimate of ``||H||_2`` by power iteration; returns ``(estimate, hvps)``."""
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    est = 0.0
    used = 0
    for _ in range(iters):
        w = _finite(hvp(v), "Hessian-vector product")
        used += 1
        nw = float(np.linalg.norm(w))
        est = max(est, nw)
        if nw == 0.0:
            break
        v = w / nw
    return est, used


# ---------------------------------------------------------------------------
# capped CG


@dataclass
class CGResult:
    kind: str  # "sol", "nc" or "budget"
    d: np.ndarray
    curvature: float | None
    iterations: int
    hvp_count: int
    capped: bool = False


def capped_cg(hvp, g, eps_H, zeta, budget, u_est=None, cap=None, rng=None):
    """Capped CG on ``(H + 2 eps_H I) d = -g``.

    Returns ``kind="sol"`` with residual ``<= zeta_hat ||g||``
    (``zeta_hat = zeta / (3 kappa)``), or ``kind="nc"`` with a direction
    satisfying ``d^T H d <= -eps_H ||d||^2`` (``curvature`` is the Rayleigh
    quotient of ``H``).  When the iteration cap ``min(n, J)`` is reached the
    current iterate is returned as a ``sol`` with ``capped=True``; it is
    still a descent direction.  ``kind="budget"`` means ``budget`` HVPs ran
    out first.
    """
    g = np.asarray(g, dtype=float)
    n = g.size
    gnorm = float(np.linalg.norm(g))
    if gnorm == 0.0:
        raise ValueError("capped_cg requires a nonzero gradient")
    if budget < 1:
        raise ValueError("budget must be at least 1")
    used = 0
    if u_est is None:
        u_est, used = power_norm_estimate(hvp, n, _rng(rng), min(POWER_ITERS, n + 1))
    if cap is None:
        cap = j_bound(u_est, eps_H, zeta, n)
    zeta_hat = zeta / (3.0 * condition_bound(u_est, eps_H))
    shift = 2.0 * eps_H

    y = np.zeros(n)
    r = g.copy()
    p = -g
    rr = gnorm**2
    for j in range(cap):
        if used >= budget:
            return CGResult("budget", y, None, j, used)
        Hp = _finite(hvp(p), "Hessian-vector product")
        used += 1
        pp = float(p @ p)
        pHp = float(p @ Hp)
        if pHp + shift * pp < eps_H * pp:
            return CGResult("nc", p, pHp / pp, j + 1, used)
        alpha = rr / (pHp + shift * pp)
        y = y + alpha * p
        r_new = r + alpha * (Hp + shift * p)
        yy = float(y @ y)
        # (H + 2 eps I) y = r - g holds for the CG iterate
        yHy_bar = float(y @ (r_new - g))
        if yHy_bar < eps_H * yy:
            return CGResult("nc", y, (yHy_bar - shift * yy) / yy, j + 1, used)
        rr_new = float(r_new @ r_new)
        if math.sqrt(rr_new) <= zeta_hat * gnorm:
            return CGResult("sol", y, None, j + 1, used)
        p = -r_new + (rr_new / rr) * p
        r, rr = r_new, rr_new
    return CGResult("sol", y, None, cap, used, capped=True)


# ---------------------------------------------------------------------------
# minimum eigenvalue oracle


@dataclass
class MEOResult:
    certified: bool
    direction: np.ndarray | None
    curvature: float | None
    hvp_count: int
    iterations: int
    min_ritz: float


def min_eig_oracle(hvp, n, eps_H, delta, seed=None, u_est=1.0, budget=None):
    """Randomized Lanczos test of ``H >= -eps_H I``.

    Runs at most ``N_meo`` Lanczos steps (full reorthogonalization) from a
    uniformly random unit vector.  Returns a unit direction with curvature
    ``<= -eps_H / 2`` as soon as one appears; otherwise certifies.  The
    certificate is wrong with probability at most ``delta``.
    """
    if n < 1:
        raise ValueError("n must be positive")
    rng = _rng(seed)
    N = n_meo(n, eps_H, delta, u_est)
    if budget is not None:
        N = min(N, budget)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    V = [v]
    alphas, betas = [], []
    used = 0
    theta = math.inf
    for j in range(N):
        w = _finite(hvp(V[j]), "Hessian-vector product")
        used += 1
        a = float(V[j] @ w)
        alphas.append(a)
        T = np.diag(alphas) + np.diag(betas, 1) + np.diag(betas, -1)
        evals, evecs = np.linalg.eigh(T)
        theta = float(evals[0])
        if theta <= -0.5 * eps_H:
            d = np.column_stack(V) @ evecs[:, 0]
            d /= np.linalg.norm(d)
            return MEOResult(False, d, theta, used, j + 1, theta)
        Vm = np.column_stack(V)
        w = w - Vm @ (Vm.T @ w)
        w = w - Vm @ (Vm.T @ w)
        b = float(np.linalg.norm(w))
        if b <= 1e-12 * max(1.0, abs(a)):
            break  # invariant subspace: Ritz values are exact
        betas.append(b)
        V.append(w / b)
    return MEOResult(True, None, None, used, len(alphas), theta)


# ---------------------------------------------------------------------------
# Newton-CG driver


def newton_cg_solve(F, z0, tol, second_order=True, seed=None):
    """Minimize ``F`` from ``z0`` with monotone Newton-CG.

    Parameters
    ----------
    F : object
        Provides ``value(z)``, ``gradient(z)`` and ``hvp(z, d)``.
    z0 : array
        Starting point.  Accepted steps never increase ``F`` above
        ``F(z0)``, so warm starting at the proximal anchor enforces the
        subproblem decrease condition.
    tol : InnerTolerances
    second_order : bool
        When true, termination additionally requires the eigenvalue oracle
        to certify ``hess F >= -eps_H I``.
    seed : int, sequence or Generator
        Seeds the power estimate and every oracle call.

    Returns
    -------
    InnerResult
    """
    rng = _rng(seed)
    z = np.array(z0, dtype=float)
    n = z.size
    Fz = float(_finite(F.value(z), "objective"))
    F0 = Fz
    g = _finite(np.asarray(F.gradient(z), dtype=float), "gradient")
    eps_g, eps_H = tol.eps_g, tol.eps_H

    iters = hvps = meo_calls = 0
    u_est = None
    L_H = 1.0
    cubic = eps_H / 24.0
    trace = [Fz]
    status = None
    message = ""
    certified_absent = False

    def hvp_at(x):
        return lambda d: F.hvp(x, d)

    def ensure_u():
        nonlocal u_est, hvps
        if u_est is None:
            steps = min(POWER_ITERS, n + 1, tol.max_hvps - hvps)
            u_est, used = power_norm_estimate(hvp_at(z), n, rng, steps)
            hvps += used

    while True:
        gn = float(np.linalg.norm(g))
        if not second_order and gn <= eps_g:
            status = FIRST_ORDER_MET
            break
        if iters >= tol.max_iters or hvps >= tol.max_hvps:
            status = BUDGET_EXHAUSTED
            message = "iteration budget reached" if iters >= tol.max_iters else "HVP budget reached"
            break

        if gn > eps_g:
            ensure_u()
            if hvps >= tol.max_hvps:
                status, message = BUDGET_EXHAUSTED, "HVP budget reached"
                break
            cap = j_bound(u_est, eps_H, tol.zeta, n)
            cg = capped_cg(hvp_at(z), g, eps_H, tol.zeta, tol.max_hvps - hvps, u_est=u_est, cap=cap)
            iters += 1
            hvps += cg.hvp_count
            if cg.kind == "budget":
                status, message = BUDGET_EXHAUSTED, "HVP budget reached inside CG"
                break
            if cg.kind == "sol":
                step = _newton_line_search(F, z, Fz, g, gn, cg.d)
                if step is None:
                    status, message = BUDGET_EXHAUSTED, "line search failed on Newton step"
                    break
                z, Fz, g = step
                trace.append(Fz)
                continue
            nc_dir, curv = cg.d, cg.curvature
            u_est = max(u_est, abs(curv))
        else:
            ensure_u()
            if tol.max_hvps - hvps < n_meo(n, eps_H, tol.delta, u_est):
                status, message = BUDGET_EXHAUSTED, "HVP budget too small for the oracle"
                break
            meo = min_eig_oracle(hvp_at(z), n, eps_H, tol.delta, seed=rng, u_est=u_est)
            iters += 1
            meo_calls += 1
            hvps += meo.hvp_count
            if meo.certified:
                status = SECOND_ORDER_MET
                certified_absent = True
                break
            nc_dir, curv = meo.direction, meo.curvature
            u_est = max(u_est, abs(curv))

        step, L_H, cubic = _curvature_step(F, z, Fz, g, nc_dir, curv, L_H, cubic)
        if step is None:
            status, message = BUDGET_EXHAUSTED, "line search failed on negative-curvature step"
            break
        z, Fz, g = step
        trace.append(Fz)

    return InnerResult(
        z=z,
        value=Fz,
        grad_norm=float(np.linalg.norm(g)),
        decrease=F0 - Fz,
        iterations=iters,
        hvp_count=hvps,
        meo_calls=meo_calls,
        status=status,
        neg_curvature_certified_absent=certified_absent,
        u_est=0.0 if u_est is None else u_est,
        message=message,
        trace=trace,
    )


def _newton_line_search(F, z, Fz, g, gn, d):
    slope = float(g @ d)
    if not slope < 0:
        d = -g
        slope = -gn**2
    alpha = 1.0
    for _ in range(MAX_BACKTRACKS):
        zt = z + alpha * d
        Ft = float(_finite(F.value(zt), "objective"))
        if Ft <= Fz + ARMIJO * alpha * slope:
            return zt, Ft, _finite(np.asarray(F.gradient(zt), dtype=float), "gradient")
        # at the roundoff floor Armijo cannot hold; accept a non-increasing
        # step that still shrinks the gradient
        if Ft <= Fz:
            gt = _finite(np.asarray(F.gradient(zt), dtype=float), "gradient")
            if np.linalg.norm(gt) < gn:
                return zt, Ft, gt
        alpha *= 0.5
    return None


def _curvature_step(F, z, Fz, g, d, curv, L_H, cubic):
    """Step of length ``|curv| / L_H`` along the unit negative-curvature direction.

    Accepts when ``F(z + s v) <= F(z) - c s^3`` with ``c`` starting at
    ``cubic``; on failure ``L_H`` doubles and every tenth failure relaxes
    ``c`` by a factor of 10.  A first-try acceptance halves ``L_H`` so the
    local estimate can recover after a region of high curvature.
    """
    v = d / np.linalg.norm(d)
    if g @ v > 0:
        v = -v
    c = cubic
    for t in range(MAX_BACKTRACKS):
        s = abs(curv) / L_H
        zt = z + s * v
        Ft = float(_finite(F.value(zt), "objective"))
        if Ft <= Fz - c * s**3:
            gt = _finite(np.asarray(F.gradient(zt), dtype=float), "gradient")
            if t == 0:
                L_H = max(0.5 * L_H, L_H_MIN)
            return (zt, Ft, gt), L_H, cubic
        L_H *= 2.0
        if (t + 1) % 10 == 0:
            c /= 10.0
    return None, L_H, cubic
