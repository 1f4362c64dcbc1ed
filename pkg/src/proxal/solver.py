"""Proximal augmented Lagrangian outer loop, classical AL baseline and run audits."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .auglag import ProxSubproblem, lyapunov
from .certify import DENSE_THRESHOLD, check_1o, check_2o
from .errors import ConfigError
from .newton_cg import BUDGET_EXHAUSTED, InnerTolerances, newton_cg_solve
from .problems import ensure_finite

log = logging.getLogger(__name__)

FIRST_ORDER = "first_order"
SECOND_ORDER = "second_order"
_MODE_ALIASES = {"1o": FIRST_ORDER, "2o": SECOND_ORDER, FIRST_ORDER: FIRST_ORDER, SECOND_ORDER: SECOND_ORDER}

CONVERGED_1O = "converged_1o"
CONVERGED_2O = "converged_2o"
MAX_OUTER_REACHED = "max_outer_reached"
INNER_BUDGET_EXHAUSTED = "inner_budget_exhausted"


def normalize_mode(mode):
    try:
        return _MODE_ALIASES[mode]
    except KeyError:
        raise ConfigError(f"mode must be one of {sorted(_MODE_ALIASES)}, got {mode!r}") from None


@dataclass(frozen=True)
class InnerSettings:
    """Newton-CG parameters shared by every subproblem of a run."""

    delta: float = 1e-3
    zeta: float = 0.5
    max_iters: int = 1000
    max_hvps: int = 500_000

    def tolerances(self, eps_g, eps_H):
        return InnerTolerances(eps_g, eps_H, self.delta, self.zeta, self.max_iters, self.max_hvps)


@dataclass
class SolverConfig:
    """Parameters of one solver run.

    ``rho=None`` selects the adaptive penalty framework; ``beta=None``
    selects ``eps**eta / 2``.  The ``tau``, ``gamma``, ``lam_min`` and
    ``lam_max`` fields are used only by :func:`classic_al_solve`, where
    ``rho`` is the initial penalty.
    """

    epsilon: float
    eta: float = 2.0
    rho: float | None = None
    beta: float | None = None
    rho0: float = 0.0
    mode: str = FIRST_ORDER
    inner: InnerSettings = field(default_factory=InnerSettings)
    max_outer: int = 1000
    seed: int = 0
    lambda0: np.ndarray | None = None
    tau: float = 0.5
    gamma: float = 10.0
    lam_min: float = -1e6
    lam_max: float = 1e6
    audit: bool = False

    def __post_init__(self):
        self.mode = normalize_mode(self.mode)
        if not 0 < self.epsilon <= 1:
            raise ConfigError(f"epsilon must lie in (0, 1], got {self.epsilon}")
        if not 0 <= self.eta <= 2:
            raise ConfigError(f"eta must lie in the valid range [0, 2], got {self.eta}")
        if self.mode == SECOND_ORDER and self.eta < 1:
            raise ConfigError(f"second-order mode needs eta in [1, 2], got {self.eta}")
        if self.rho is not None and not self.rho > 0:
            raise ConfigError(f"rho must be positive, got {self.rho}")
        if self.beta is not None:
            if not self.beta > 0:
                raise ConfigError(f"beta must be positive, got {self.beta}")
            log.warning(
                "beta overridden to %g; complexity guarantees assume beta = eps**eta / 2", self.beta
            )
        if self.rho0 < 0:
            raise ConfigError("rho0 must be nonnegative")
        if self.max_outer < 1:
            raise ConfigError("max_outer must be at least 1")
        if not 0 < self.tau < 1 or not self.gamma > 1:
            raise ConfigError("need tau in (0, 1) and gamma > 1")
        if self.lam_min > self.lam_max:
            raise ConfigError("lam_min must not exceed lam_max")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.lambda0 is not None:
            self.lambda0 = np.asarray(self.lambda0, dtype=float)

    @property
    def beta_value(self):
        return self.epsilon**self.eta / 2.0 if self.beta is None else self.beta

    @property
    def second_order(self):
        return self.mode == SECOND_ORDER


@dataclass
class OuterState:
    """Telemetry for outer iterate ``k >= 1`` (``x_k``, ``lam_k``)."""

    k: int
    stat_norm: float
    feas_norm: float
    dx_norm: float
    dlambda_norm: float
    P: float
    inner_iters: int
    hvp_count: int
    eps_g: float
    eps_H: float
    r_tilde_norm: float
    rho: float
    psi_start: float
    psi_end: float
    meo_calls: int = 0
    inner_status: str = ""


@dataclass
class RunRecord:
    iterations: list = field(default_factory=list)
    stop_index: int | None = None
    status: str = MAX_OUTER_REACHED
    wall_time: float = 0.0
    x: np.ndarray | None = None
    lam: np.ndarray | None = None
    rho: float | None = None
    beta: float | None = None
    epsilon: float | None = None
    seed: int = 0
    message: str = ""
    certificate: object = None
    # audit mode: x_0..x_T and lam_0..lam_T
    xs: list | None = None
    lams: list | None = None

    @property
    def converged(self):
        return self.status in (CONVERGED_1O, CONVERGED_2O)

    @property
    def outer_iterations(self):
        return len(self.iterations)

    @property
    def inner_iterations(self):
        return sum(s.inner_iters for s in self.iterations)

    @property
    def hvp_count(self):
        return sum(s.hvp_count for s in self.iterations)


def tolerance_schedule(k, eps, mode):
    """Inner tolerances for producing ``x_k``: ``(min(1/k, eps/2), eps_H)``.

    ``eps_H`` is ``sqrt(eps)/2`` in first-order mode and ``eps/2`` in
    second-order mode.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    mode = normalize_mode(mode)
    eps_g = min(1.0 / k, eps / 2.0)
    eps_H = math.sqrt(eps) / 2.0 if mode == FIRST_ORDER else eps / 2.0
    return eps_g, eps_H


def stopping_check(problem, x, lam, eps):
    """``(stop, stat_norm, feas_norm)`` for the ordinary-Lagrangian test."""
    cert = check_1o(problem, x, lam, eps)
    return cert.is_1o(eps), cert.stat_norm, cert.feas_norm


def multiplier_update(lam, rho, c_val):
    return np.asarray(lam, dtype=float) + rho * np.asarray(c_val, dtype=float)


def project_multiplier(lam, lam_min, lam_max):
    return np.clip(lam, lam_min, lam_max)


def update_penalty(k, c_new_inf, c_old_inf, rho, tau, gamma):
    """Classical rule: keep ``rho`` at ``k = 0`` or on sufficient feasibility progress."""
    if k == 0 or c_new_inf <= tau * c_old_inf:
        return rho
    return gamma * rho


def _initial(problem, config, x0, lam0):
    if x0 is None:
        if problem.x0 is None:
            raise ConfigError("no starting point given and the problem has no default")
        x0 = problem.x0
    x = np.array(x0, dtype=float)
    if x.shape != (problem.n,):
        raise ConfigError(f"x0 must have length {problem.n}")
    ensure_finite(x, "starting point")
    if lam0 is None:
        lam0 = config.lambda0 if config.lambda0 is not None else np.zeros(problem.m)
    lam = np.array(lam0, dtype=float)
    if lam.shape != (problem.m,):
        raise ConfigError(f"lambda0 must have length {problem.m}")
    return x, lam


def _certificate(problem, x, lam, eps):
    if problem.n <= DENSE_THRESHOLD:
        return check_2o(problem, x, lam, eps)
    return check_1o(problem, x, lam, eps)


def proximal_al_solve(problem, config, x0=None, lam0=None, seed_path=()):
    """Run the proximal augmented Lagrangian method with a fixed penalty.

    Each subproblem ``min L_rho(x, lam_k) + beta/2 ||x - x_k||^2`` is solved by
    Newton-CG warm started at ``x_k`` with tolerances from
    :func:`tolerance_schedule`; then ``lam_{k+1} = lam_k + rho c(x_{k+1})``.
    The run stops at the first ``t >= 1`` passing :func:`stopping_check`.

    Returns a :class:`RunRecord` whose ``certificate`` is computed at the
    terminal point with the solver's own multiplier.
    """
    if config.rho is None:
        raise ConfigError("proximal_al_solve needs a fixed rho; use proxal.solve for adaptive rho")
    t_start = time.perf_counter()
    x, lam = _initial(problem, config, x0, lam0)
    rho, beta, eps = float(config.rho), config.beta_value, config.epsilon
    record = RunRecord(rho=rho, beta=beta, epsilon=eps, seed=int(config.seed))
    if config.audit:
        record.xs, record.lams = [x.copy()], [lam.copy()]

    for k in range(config.max_outer):
        eps_g, eps_H = tolerance_schedule(k + 1, eps, config.mode)
        sub = ProxSubproblem(problem, lam, rho, beta, x)
        res = newton_cg_solve(
            sub.oracle(), x, config.inner.tolerances(eps_g, eps_H),
            second_order=config.second_order,
            seed=np.random.default_rng([int(config.seed), *seed_path, k]),
        )
        if res.status == BUDGET_EXHAUSTED:
            record.status = INNER_BUDGET_EXHAUSTED
            record.message = f"outer iteration {k + 1}: {res.message}"
            break
        x_new = res.z
        lam_new = multiplier_update(lam, rho, ensure_finite(problem.c(x_new), "constraints"))
        stop, stat, feas = stopping_check(problem, x_new, lam_new, eps)
        record.iterations.append(
            OuterState(
                k=k + 1,
                stat_norm=stat,
                feas_norm=feas,
                dx_norm=float(np.linalg.norm(x_new - x)),
                dlambda_norm=float(np.linalg.norm(lam_new - lam)),
                P=lyapunov(problem, rho, beta, x_new, x, lam_new),
                inner_iters=res.iterations,
                hvp_count=res.hvp_count,
                eps_g=eps_g,
                eps_H=eps_H,
                r_tilde_norm=res.grad_norm,
                rho=rho,
                psi_start=res.trace[0],
                psi_end=res.value,
                meo_calls=res.meo_calls,
                inner_status=res.status,
            )
        )
        x, lam = x_new, lam_new
        if config.audit:
            record.xs.append(x.copy())
            record.lams.append(lam.copy())
        if stop:
            record.stop_index = k + 1
            record.status = CONVERGED_2O if config.second_order else CONVERGED_1O
            break

    record.x, record.lam = x, lam
    record.certificate = _certificate(problem, x, lam, eps)
    record.wall_time = time.perf_counter() - t_start
    log.info("proximal AL: %s after %d outer iterations", record.status, record.outer_iterations)
    return record


def classic_al_solve(problem, config, x0=None, lam0=None):
    """Classical augmented Lagrangian with safeguarded multipliers.

    ``config.rho`` is the initial penalty; it is multiplied by ``gamma``
    whenever ``||c||_inf`` fails to shrink by ``tau``.  Multipliers are
    projected onto ``[lam_min, lam_max]``.
    """
    if config.rho is None:
        raise ConfigError("classic_al_solve needs an initial rho")
    t_start = time.perf_counter()
    x, lam = _initial(problem, config, x0, lam0)
    if np.any(lam < config.lam_min) or np.any(lam > config.lam_max):
        raise ConfigError("lambda0 must lie inside [lam_min, lam_max]")
    rho, eps = float(config.rho), config.epsilon
    record = RunRecord(rho=rho, beta=0.0, epsilon=eps, seed=int(config.seed))
    if config.audit:
        record.xs, record.lams = [x.copy()], [lam.copy()]
    c_old_inf = float(np.max(np.abs(problem.c(x)), initial=0.0))

    for k in range(config.max_outer):
        eps_g, eps_H = tolerance_schedule(k + 1, eps, config.mode)
        sub = ProxSubproblem(problem, lam, rho, 0.0, x)
        res = newton_cg_solve(
            sub.oracle(), x, config.inner.tolerances(eps_g, eps_H),
            second_order=config.second_order,
            seed=np.random.default_rng([int(config.seed), k]),
        )
        if res.status == BUDGET_EXHAUSTED:
            record.status = INNER_BUDGET_EXHAUSTED
            record.message = f"outer iteration {k + 1}: {res.message}"
            break
        x_new = res.z
        c_new = ensure_finite(problem.c(x_new), "constraints")
        lam_new = project_multiplier(
            multiplier_update(lam, rho, c_new), config.lam_min, config.lam_max
        )
        stop, stat, feas = stopping_check(problem, x_new, lam_new, eps)
        record.iterations.append(
            OuterState(
                k=k + 1,
                stat_norm=stat,
                feas_norm=feas,
                dx_norm=float(np.linalg.norm(x_new - x)),
                dlambda_norm=float(np.linalg.norm(lam_new - lam)),
                P=lyapunov(problem, rho, 0.0, x_new, x, lam_new),
                inner_iters=res.iterations,
                hvp_count=res.hvp_count,
                eps_g=eps_g,
                eps_H=eps_H,
                r_tilde_norm=res.grad_norm,
                rho=rho,
                psi_start=res.trace[0],
                psi_end=res.value,
                meo_calls=res.meo_calls,
                inner_status=res.status,
            )
        )
        c_new_inf = float(np.max(np.abs(c_new), initial=0.0))
        rho = update_penalty(k, c_new_inf, c_old_inf, rho, config.tau, config.gamma)
        c_old_inf = c_new_inf
        x, lam = x_new, lam_new
        if config.audit:
            record.xs.append(x.copy())
            record.lams.append(lam.copy())
        if stop:
            record.stop_index = k + 1
            record.status = CONVERGED_2O if config.second_order else CONVERGED_1O
            break

    record.x, record.lam, record.rho = x, lam, rho
    record.certificate = _certificate(problem, x, lam, eps)
    record.wall_time = time.perf_counter() - t_start
    return record


# ---------------------------------------------------------------------------
# audits (need a record produced with audit=True)


@dataclass
class Violation:
    k: int
    lhs: float
    rhs: float


def _require_iterates(record):
    if record.xs is None or record.lams is None:
        raise ValueError("record has no stored iterates; rerun with audit=True")


def decrease_audit(record, problem, rtol=1e-12):
    """Check ``psi_k(x_{k+1}) <= psi_k(x_k)`` for every outer iteration.

    Both sides are recomputed from the stored iterates.
    """
    _require_iterates(record)
    out = []
    for k, st in enumerate(record.iterations):
        sub = ProxSubproblem(problem, record.lams[k], st.rho, record.beta, record.xs[k])
        before = sub.value(record.xs[k])
        after = sub.value(record.xs[k + 1])
        if after > before + rtol * (1.0 + abs(before)):
            out.append(Violation(k, after, before))
    return out


def lyapunov_descent_audit(record, problem, atol_rel=1e-8):
    """Check ``P_{k+1} - P_k <= ||dlam_{k+1}||^2/rho - beta/4 (||dx_{k+1}||^2 + ||dx_k||^2)``.

    Returns a list of :class:`Violation` (``lhs`` is ``P_{k+1} - P_k``).
    """
    _require_iterates(record)
    xs, lams, beta = record.xs, record.lams, record.beta
    out = []
    for k in range(1, len(xs) - 1):
        rho = record.iterations[k].rho
        P_k = lyapunov(problem, rho, beta, xs[k], xs[k - 1], lams[k])
        P_next = lyapunov(problem, rho, beta, xs[k + 1], xs[k], lams[k + 1])
        dlam = lams[k + 1] - lams[k]
        dx1 = xs[k + 1] - xs[k]
        dx0 = xs[k] - xs[k - 1]
        rhs = float(dlam @ dlam) / rho - 0.25 * beta * (float(dx1 @ dx1) + float(dx0 @ dx0))
        if P_next - P_k > rhs + atol_rel * (1.0 + abs(P_k)):
            out.append(Violation(k, P_next - P_k, rhs))
    return out


def kkt_residual_audit(record, problem):
    """Max over ``k`` of ``| ||grad f + grad_c lam_{k+1} + beta dx_{k+1}|| - ||r_{k+1}|| |``
    relative to ``1 + ||grad f(x_{k+1})||``."""
    _require_iterates(record)
    worst = 0.0
    for k, st in enumerate(record.iterations):
        x1 = record.xs[k + 1]
        gf = np.asarray(problem.grad(x1), dtype=float)
        r = gf + record.beta * (x1 - record.xs[k])
        if problem.m:
            r = r + problem.jac_t_vec(x1, record.lams[k + 1])
        gap = abs(float(np.linalg.norm(r)) - st.r_tilde_norm) / (1.0 + float(np.linalg.norm(gf)))
        worst = max(worst, gap)
    return worst


def multiplier_identity_audit(record, problem):
    """Max relative error of ``lam_k - lam_{k-1} = rho c(x_k)``.

    The error is measured relative to ``||lam_{k-1}|| + rho ||c(x_k)||``, the
    magnitude of the operands of the floating-point update.
    """
    _require_iterates(record)
    worst = 0.0
    for k, st in enumerate(record.iterations):
        step = st.rho * np.asarray(problem.c(record.xs[k + 1]), dtype=float)
        err = np.linalg.norm(record.lams[k + 1] - record.lams[k] - step)
        scale = np.linalg.norm(record.lams[k]) + np.linalg.norm(step)
        if err > 0:
            worst = max(worst, float(err / scale))
    return worst


def first_stop_index(record, problem):
    """Re-scan stored iterates for the first ``t >= 1`` passing the stopping test."""
    _require_iterates(record)
    for t in range(1, len(record.xs)):
        if stopping_check(problem, record.xs[t], record.lams[t], record.epsilon)[0]:
            return t
    return None


def rho_lower_bound(ledger, eps, eta, beta, D_S, lambda0=None):
    """Penalty threshold ``rho_eta`` built from the problem constants.

    ``C1 = 4/sigma^2 (L_f + L_c M_f / sigma + beta)^2`` and
    ``C2 = 4/sigma^2 (beta + 2 M_c beta / sigma)^2``.
    """
    sigma = ledger.require("sigma")
    M_f, L_f = ledger.require("M_f"), ledger.require("L_f")
    M_c, L_c = ledger.require("M_c"), ledger.require("L_c")
    rho0, R = ledger.require("rho0"), ledger.require("R")
    lam0_sq = 0.0 if lambda0 is None else float(np.dot(lambda0, lambda0))
    C1 = 4.0 / sigma**2 * (L_f + L_c * M_f / sigma + beta) ** 2
    C2 = 4.0 / sigma**2 * (beta + 2.0 * M_c * beta / sigma) ** 2
    return max(
        16.0 * max(C1, C2) / eps**eta,
        (M_f + beta * D_S + 1.0) ** 2 / (2.0 * sigma**2) + rho0,
        lam0_sq / 2.0 + rho0,
        16.0 * (M_c**2 + sigma**2) * R / sigma**4,
        3.0 * rho0,
        1.0,
    )
