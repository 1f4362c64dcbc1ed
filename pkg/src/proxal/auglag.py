"""Augmented Lagrangian, proximal subproblem objective and Lyapunov value."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .problems import ProblemInstance, ensure_finite


def _c(problem, x):
    return ensure_finite(np.asarray(problem.c(x), dtype=float), "constraints")


def al_value(problem, x, lam, rho):
    """``f(x) + lam^T c(x) + rho/2 ||c(x)||^2``; ``rho = 0`` is the ordinary Lagrangian."""
    cx = _c(problem, x)
    return float(ensure_finite(problem.f(x) + lam @ cx + 0.5 * rho * (cx @ cx), "AL value"))


def al_gradient(problem, x, lam, rho):
    cx = _c(problem, x)
    g = np.asarray(problem.grad(x), dtype=float)
    if problem.m:
        g = g + problem.jac_t_vec(x, lam + rho * cx)
    return ensure_finite(g, "AL gradient")


def lyapunov(problem, rho, beta, x_k, x_prev, lam_k):
    """``L_rho(x_k, lam_k) + beta/4 ||x_k - x_{k-1}||^2``."""
    dx = np.asarray(x_k) - np.asarray(x_prev)
    return al_value(problem, x_k, lam_k, rho) + 0.25 * beta * float(dx @ dx)


@dataclass(frozen=True)
class ProxSubproblem:
    """``psi(x) = L_rho(x, lam) + beta/2 ||x - anchor||^2``."""

    problem: ProblemInstance
    lam: np.ndarray
    rho: float
    beta: float
    anchor: np.ndarray

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if not self.beta >= 0:
            raise ValueError(f"beta must be nonnegative, got {self.beta}")
        if np.shape(self.lam) != (self.problem.m,):
            raise ValueError("multiplier dimension does not match problem.m")
        if np.shape(self.anchor) != (self.problem.n,):
            raise ValueError("anchor dimension does not match problem.n")

    # value/gradient go through the cached path so both agree bitwise
    def value(self, x):
        return CachedProx(self).value(x)

    def gradient(self, x):
        return CachedProx(self).gradient(x)

    def hvp(self, x, d):
        cx = _c(self.problem, x)
        return self._hvp(x, d, cx)

    def _hvp(self, x, d, cx):
        p = self.problem
        out = np.asarray(p.hvp(x, self.lam + self.rho * cx, d), dtype=float)
        if p.m:
            out = out + self.rho * p.jac_t_vec(x, p.jac_vec(x, d))
        return ensure_finite(out + self.beta * d, "subproblem HVP")

    def oracle(self):
        """Evaluator bundle sharing one cached ``c(x)`` per point (cache size 1)."""
        return CachedProx(self)


class CachedProx:
    """Per-worker wrapper around a :class:`ProxSubproblem`.

    Value, gradient and HVP at the same ``x`` reuse a single constraint
    evaluation; the inner CG loop calls ``hvp`` many times at fixed ``x``.
    """

    def __init__(self, sub):
        self.sub = sub
        self._key = None
        self._cx = None

    def _constraints(self, x):
        key = x.tobytes()
        if key != self._key:
            self._cx = _c(self.sub.problem, x)
            self._key = key
        return self._cx

    def value(self, x):
        s = self.sub
        p = s.problem
        cx = self._constraints(x)
        dx = x - s.anchor
        val = p.f(x) + s.lam @ cx + 0.5 * s.rho * (cx @ cx) + 0.5 * s.beta * (dx @ dx)
        return float(ensure_finite(val, "subproblem value"))

    def gradient(self, x):
        s = self.sub
        p = s.problem
        cx = self._constraints(x)
        g = np.asarray(p.grad(x), dtype=float)
        if p.m:
            g = g + p.jac_t_vec(x, s.lam + s.rho * cx)
        return ensure_finite(g + s.beta * (x - s.anchor), "subproblem gradient")

    def hvp(self, x, d):
        return self.sub._hvp(x, d, self._constraints(x))
