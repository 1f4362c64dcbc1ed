"""Trial-penalty framework (geometric ``rho`` / iteration-budget schedules)
and the Phase-I feasibility procedure."""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .newton_cg import BUDGET_EXHAUSTED, InnerTolerances, newton_cg_solve
from .problems import ensure_finite
from .solver import RunRecord, proximal_al_solve

log = logging.getLogger(__name__)

MAX_TRIALS_REACHED = "max_trials_reached"
INFEASIBLE_CRITICAL = "infeasible_critical"


@dataclass(frozen=True)
class AdaptiveSchedule:
    q: float = 10.0
    T0: int = 20
    C0: float = 1.0
    max_trials: int = 60
    Lambda0: np.ndarray | None = None
    T_cap: int | None = None  # optional ceiling on T_tau; None keeps the schedule exact

    def __post_init__(self):
        if not self.q > 1:
            raise ConfigError(f"q must exceed 1, got {self.q}")
        if int(self.T0) != self.T0 or self.T0 < 1:
            raise ConfigError(f"T0 must be a positive integer, got {self.T0}")
        if not self.C0 > 0:
            raise ConfigError("C0 must be positive")
        if self.max_trials < 1:
            raise ConfigError("max_trials must be at least 1")
        if self.T_cap is not None and self.T_cap < 1:
            raise ConfigError("T_cap must be at least 1")


def _ceil(v):
    # guard against products like 20 * 10 * 0.1 = 20.000000000000004
    return math.ceil(v * (1.0 - 1e-12))


def schedule(tau, q, T0, eta, eps):
    """Trial penalty and iteration budget ``(rho_tau, T_tau)``."""
    if tau < 1:
        raise ValueError("tau must be at least 1")
    qt = q**tau
    if eta < 1:
        return max(qt * eps ** (2 - 2 * eta), 1.0), _ceil(T0 * qt) + 1
    if eta == 1:
        return qt, _ceil(T0 * qt) + 1
    return qt, max(_ceil(T0 * qt * eps ** (2 * eta - 2)) + 1, int(T0))


@dataclass
class Phase1Result:
    x: np.ndarray
    feasible: bool
    c_norm: float
    grad_norm: float
    threshold: float
    iterations: int
    hvp_count: int
    status: str


class _SquaredResidual:
    """``F(x) = ||c(x)||^2`` with gradient ``2 grad_c c`` and exact HVP."""

    def __init__(self, problem):
        self.p = problem

    def value(self, x):
        cx = np.asarray(self.p.c(x), dtype=float)
        return float(ensure_finite(cx @ cx, "constraint residual"))

    def gradient(self, x):
        return 2.0 * self.p.jac_t_vec(x, np.asarray(self.p.c(x), dtype=float))

    def hvp(self, x, d):
        cx = np.asarray(self.p.c(x), dtype=float)
        return 2.0 * (self.p.chvp(x, cx, d) + self.p.jac_t_vec(x, self.p.jac_vec(x, d)))


def phase1_feasibility(problem, x_init, rho, eps, C0, inner=None, seed=0):
    """Minimize ``||c(x)||^2`` to a near-feasible start for penalty ``rho``.

    Newton-CG runs with ``eps_g = min(eps, sqrt(C0/rho), 1)`` and
    ``eps_H = sqrt(eps_g)``.  The result is feasible-enough when
    ``||c(x)|| <= min(sqrt(C0/rho), 1)``; otherwise the point is an
    approximate infeasible critical point.
    """
    if not (rho > 0 and eps > 0 and C0 > 0):
        raise ValueError("rho, eps and C0 must be positive")
    bound = min(math.sqrt(C0 / rho), 1.0)
    eps_g = min(eps, bound)
    tol = InnerTolerances(
        eps_g, math.sqrt(eps_g),
        **({} if inner is None else {
            "delta": inner.delta, "zeta": inner.zeta,
            "max_iters": inner.max_iters, "max_hvps": inner.max_hvps,
        }),
    )
    res = newton_cg_solve(
        _SquaredResidual(problem), np.asarray(x_init, dtype=float), tol,
        second_order=False, seed=seed,
    )
    c_norm = float(np.linalg.norm(problem.c(res.z)))
    return Phase1Result(
        x=res.z,
        feasible=res.status != BUDGET_EXHAUSTED and c_norm <= bound,
        c_norm=c_norm,
        grad_norm=res.grad_norm,
        threshold=bound,
        iterations=res.iterations,
        hvp_count=res.hvp_count,
        status=res.status,
    )


@dataclass
class Trial:
    tau: int
    rho: float
    T_tau: int
    start: np.ndarray
    lambda0: np.ndarray
    record: RunRecord
    phase1: Phase1Result | None = None


@dataclass
class AdaptiveResult:
    record: RunRecord
    certificate: object
    tau_final: int | None
    status: str
    trials: list = field(default_factory=list)

    @property
    def converged(self):
        return self.record is not None and self.record.converged

    @property
    def total_outer_iterations(self):
        return sum(t.record.outer_iterations for t in self.trials)

    @property
    def total_inner_iterations(self):
        return sum(t.record.inner_iterations for t in self.trials)

    @property
    def total_hvps(self):
        return sum(t.record.hvp_count for t in self.trials) + sum(
            t.phase1.hvp_count for t in self.trials if t.phase1 is not None
        )


def adaptive_solve(problem, config, sched=None, x0=None, z_provider=None):
    """Run the fixed-penalty method on a growing sequence of trial penalties.

    Trial ``tau`` restarts from ``z_tau`` with multipliers ``Lambda0`` and
    runs at most ``T_tau`` outer iterations with ``rho = rho_tau``.  The
    first trial that meets the stopping test ends the search.

    ``z_provider(tau, rho_tau, previous_x)`` returns the start of trial
    ``tau``.  By default Phase I is run from the previous trial's terminal
    point (the user start for ``tau = 1``).
    """
    sched = sched or AdaptiveSchedule()
    t_start = time.perf_counter()
    if x0 is None:
        x0 = problem.x0
    if x0 is None:
        raise ConfigError("no starting point given and the problem has no default")
    prev = np.array(x0, dtype=float)
    Lambda0 = np.zeros(problem.m) if sched.Lambda0 is None else np.asarray(sched.Lambda0, dtype=float)
    if config.lambda0 is not None and sched.Lambda0 is None:
        Lambda0 = np.asarray(config.lambda0, dtype=float)

    trials = []
    status = MAX_TRIALS_REACHED
    for tau in range(1, sched.max_trials + 1):
        rho, T = schedule(tau, sched.q, sched.T0, config.eta, config.epsilon)
        if sched.T_cap is not None:
            T = min(T, sched.T_cap)
        p1 = None
        if z_provider is None:
            p1 = phase1_feasibility(
                problem, prev, rho, config.epsilon, sched.C0, inner=config.inner,
                seed=np.random.default_rng([int(config.seed), tau, 2**32 - 1]),
            )
            if not p1.feasible:
                status = INFEASIBLE_CRITICAL
                rec = RunRecord(x=p1.x, lam=Lambda0.copy(), rho=rho, epsilon=config.epsilon,
                                status=INFEASIBLE_CRITICAL, seed=int(config.seed),
                                message=f"Phase I stalled at ||c|| = {p1.c_norm:.3e}")
                trials.append(Trial(tau, rho, T, prev.copy(), Lambda0.copy(), rec, p1))
                break
            z = p1.x
        else:
            z = np.asarray(z_provider(tau, rho, prev), dtype=float)
        trial_cfg = dataclasses.replace(config, rho=rho, max_outer=T, beta=config.beta)
        rec = proximal_al_solve(problem, trial_cfg, x0=z, lam0=Lambda0.copy(), seed_path=(tau,))
        trials.append(Trial(tau, rho, T, z.copy(), Lambda0.copy(), rec, p1))
        log.info("trial %d: rho=%g T=%d -> %s", tau, rho, T, rec.status)
        if rec.converged:
            status = rec.status
            break
        prev = rec.x

    last = trials[-1].record
    last.wall_time = time.perf_counter() - t_start
    tau_final = trials[-1].tau if last.converged else None
    return AdaptiveResult(last, last.certificate, tau_final, status, trials)


def solve(problem, config, x0=None, sched=None):
    """Solve with a fixed ``config.rho`` or, when it is ``None``, adaptively.

    Always returns an :class:`AdaptiveResult`; a fixed-penalty run is
    reported as a single trial.
    """
    if config.rho is None:
        return adaptive_solve(problem, config, sched, x0=x0)
    rec = proximal_al_solve(problem, config, x0=x0)
    start = np.array(problem.x0 if x0 is None else x0, dtype=float)
    lam0 = np.zeros(problem.m) if config.lambda0 is None else np.asarray(config.lambda0)
    trial = Trial(1, float(config.rho), config.max_outer, start, lam0, rec)
    return AdaptiveResult(rec, rec.certificate, 1 if rec.converged else None, rec.status, [trial])
