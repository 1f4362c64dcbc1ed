"""Run configuration files, telemetry persistence and the epsilon-scaling study."""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .adaptive import AdaptiveSchedule, solve
from .errors import ConfigError
from .problems import build_problem
from .solver import InnerSettings, SolverConfig

CSV_COLUMNS = (
    "k", "stat_norm", "feas_norm", "dx_norm", "dlambda_norm", "P_k",
    "inner_iters", "hvp_count", "eps_g_k", "eps_H_k", "r_tilde_norm",
)


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ProblemSpec(_Strict):
    name: str
    params: dict = Field(default_factory=dict)


class InnerSpec(_Strict):
    delta: float = Field(1e-3, gt=0, lt=1)
    zeta: float = Field(0.5, gt=0, lt=1)
    max_iters: int = Field(1000, ge=1)
    max_hvps: int = Field(500_000, ge=1)


class AdaptiveSpec(_Strict):
    q: float = Field(10.0, gt=1)
    T0: int = Field(20, ge=1)
    C0: float = Field(1.0, gt=0)
    max_trials: int = Field(60, ge=1)
    T_cap: int | None = Field(None, ge=1)


class FixedRho(_Strict):
    fixed: float = Field(gt=0)


RhoPolicy = Union[Literal["adaptive"], FixedRho]


class RunConfigFile(_Strict):
    """Schema of the ``--config`` JSON file for ``solve``, ``audit`` and ``phase1``.

    ``rho`` is ``"adaptive"`` or ``{"fixed": value}``; ``beta`` is
    ``"default"`` (``eps**eta / 2``) or a positive number.
    """

    problem: ProblemSpec
    mode: Literal["1o", "2o"] = "1o"
    epsilon: float = 1e-6
    eta: float = 2.0
    rho: RhoPolicy = "adaptive"
    beta: Union[Literal["default"], float] = "default"
    seed: int = Field(0, ge=0, lt=2**64)
    max_outer: int = Field(1000, ge=1)
    inner: InnerSpec = Field(default_factory=InnerSpec)
    adaptive: AdaptiveSpec = Field(default_factory=AdaptiveSpec)
    x0: list[float] | None = None
    lambda0: list[float] | None = None
    out: str | None = None
    audit: bool = False

    @model_validator(mode="after")
    def _ranges(self):
        # reuse the solver's own validation so messages stay consistent
        self.solver_config()
        return self

    def rho_value(self):
        return None if self.rho == "adaptive" else self.rho.fixed

    def solver_config(self):
        return SolverConfig(
            epsilon=self.epsilon,
            eta=self.eta,
            rho=self.rho_value(),
            beta=None if self.beta == "default" else float(self.beta),
            mode=self.mode,
            inner=InnerSettings(**self.inner.model_dump()),
            max_outer=self.max_outer,
            seed=self.seed,
            lambda0=None if self.lambda0 is None else np.array(self.lambda0),
            audit=self.audit,
        )

    def schedule(self):
        return AdaptiveSchedule(**self.adaptive.model_dump())

    def build(self):
        return build_problem(self.problem.name, self.problem.params)


class ScalingStudySpec(_Strict):
    problem: ProblemSpec = ProblemSpec(name="sphere_linear", params={"n": 2, "b": [1.0, 0.0]})
    grid: list[float]
    eta: float = 2.0
    mode: Literal["1o", "2o"] = "1o"
    repetitions: int = Field(1, ge=1)
    seed_base: int = Field(0, ge=0, lt=2**63)
    slope_tolerance: float = Field(0.3, ge=0)
    max_T_cap: int = Field(50, ge=1)
    rho: float | None = Field(None, gt=0)
    x0: list[float] | None = None
    inner: InnerSpec = Field(default_factory=InnerSpec)
    adaptive: AdaptiveSpec = Field(default_factory=AdaptiveSpec)
    max_outer: int = Field(100_000, ge=1)

    @field_validator("grid")
    @classmethod
    def _grid(cls, g):
        if len(g) < 3:
            raise ValueError("epsilon grid needs at least 3 values")
        if any(not 0 < e <= 1 for e in g):
            raise ValueError("epsilon grid values must lie in (0, 1]")
        if any(b >= a for a, b in zip(g, g[1:])):
            raise ValueError("epsilon grid must be strictly decreasing")
        return g

    @property
    def expected_slope(self):
        return 2.0 - self.eta


def _raise_config(exc, source):
    raise ConfigError(f"invalid {source}: {exc}") from None


def load_run_config(path_or_dict):
    data = _read_json(path_or_dict)
    try:
        return RunConfigFile.model_validate(data)
    except ValidationError as exc:
        _raise_config(exc, "run configuration")


def load_scaling_spec(path_or_dict):
    data = _read_json(path_or_dict)
    try:
        return ScalingStudySpec.model_validate(data)
    except ValidationError as exc:
        _raise_config(exc, "scaling-study specification")


def _read_json(src):
    if isinstance(src, dict):
        return src
    text = Path(src).read_text()  # OSError becomes an I/O exit code in the CLI
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{src}: not valid JSON ({exc})") from None


# ---------------------------------------------------------------------------
# persistence


def _fmt(v):
    return repr(int(v)) if isinstance(v, (int, np.integer)) else repr(float(v))


def csv_text(record):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for s in record.iterations:
        w.writerow([
            _fmt(s.k), _fmt(s.stat_norm), _fmt(s.feas_norm), _fmt(s.dx_norm),
            _fmt(s.dlambda_norm), _fmt(s.P), _fmt(s.inner_iters), _fmt(s.hvp_count),
            _fmt(s.eps_g), _fmt(s.eps_H), _fmt(s.r_tilde_norm),
        ])
    return buf.getvalue()


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    return v


def run_summary(record, config_echo=None, extra=None):
    """JSON-ready summary; totals are the sums of the CSV columns."""
    out = {
        "status": record.status,
        "stop_index": record.stop_index,
        "totals": {
            "outer_iterations": record.outer_iterations,
            "inner_iterations": record.inner_iterations,
            "hvp_count": record.hvp_count,
        },
        "seed": int(record.seed),
        "rho": _jsonable(record.rho),
        "beta": _jsonable(record.beta),
        "epsilon": record.epsilon,
        "x": [float(v) for v in record.x],
        "lambda": [float(v) for v in record.lam],
        "message": record.message,
        "certificate": None if record.certificate is None else record.certificate.to_dict(),
        "config": config_echo,
    }
    if extra:
        out.update(extra)
    return out


def persist_run(record, out_dir, config_echo=None, extra=None, stem="run"):
    """Write ``<stem>.csv`` (one row per outer iteration) and ``<stem>.json``.

    Returns the two paths.  ``OSError`` propagates to the caller.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = out / f"{stem}.csv", out / f"{stem}.json"
    csv_path.write_text(csv_text(record))
    json_path.write_text(json.dumps(run_summary(record, config_echo, extra), indent=2) + "\n")
    return csv_path, json_path


def load_run_summary(path):
    return json.loads(Path(path).read_text())


def read_csv_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def adaptive_extra(result):
    """Per-trial bookkeeping for runs that went through the trial framework."""
    return {
        "tau_final": result.tau_final,
        "trials": [
            {
                "tau": t.tau,
                "rho": t.rho,
                "T_tau": t.T_tau,
                "status": t.record.status,
                "outer_iterations": t.record.outer_iterations,
                "phase1_hvps": None if t.phase1 is None else t.phase1.hvp_count,
            }
            for t in result.trials
        ],
        "all_trials_totals": {
            "outer_iterations": result.total_outer_iterations,
            "inner_iterations": result.total_inner_iterations,
            "hvp_count": result.total_hvps,
        },
    }


# ---------------------------------------------------------------------------
# scaling study


def fit_log_slope(eps, T):
    """Least-squares slope of ``log T`` against ``log(1/eps)``."""
    x = np.log(1.0 / np.asarray(eps, dtype=float))
    y = np.log(np.asarray(T, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


def _study_config(spec, eps, rho, seed):
    return SolverConfig(
        epsilon=eps, eta=spec.eta, rho=rho, mode=spec.mode,
        inner=InnerSettings(**spec.inner.model_dump()),
        max_outer=spec.max_outer, seed=seed,
    )


def scaling_study(spec):
    """Measure outer iterations ``T_eps`` over the grid and fit the growth rate.

    Without a fixed ``spec.rho`` the adaptive framework runs first at every
    grid point; the largest accepted penalty is then reused for all fixed-rho
    measurement runs.  Cells run sequentially in grid order, each with seed
    ``seed_base + 1000 * grid_index + repetition``.
    """
    problem = build_problem(spec.problem.name, spec.problem.params)
    x0 = None if spec.x0 is None else np.array(spec.x0)
    sched = AdaptiveSchedule(**spec.adaptive.model_dump())
    failures = []

    rho = spec.rho
    accepted = []
    if rho is None:
        for i, eps in enumerate(spec.grid):
            res = solve(problem, _study_config(spec, eps, None, spec.seed_base + 1000 * i), x0, sched)
            if not res.converged:
                failures.append({"phase": "adaptive", "epsilon": eps, "status": res.status})
            else:
                accepted.append(res.trials[-1].rho)
        rho = max(accepted) if accepted else None

    cells = []
    if rho is not None:
        for i, eps in enumerate(spec.grid):
            for r in range(spec.repetitions):
                seed = spec.seed_base + 1000 * i + r
                res = solve(problem, _study_config(spec, eps, rho, seed), x0)
                cell = {
                    "epsilon": eps, "repetition": r, "seed": seed, "status": res.status,
                    "T": res.record.stop_index, "inner_iterations": res.record.inner_iterations,
                    "hvp_count": res.record.hvp_count,
                }
                cells.append(cell)
                if not res.converged:
                    failures.append({"phase": "fixed", **cell})

    medians = {}
    for eps in spec.grid:
        Ts = [c["T"] for c in cells if c["epsilon"] == eps and c["T"] is not None]
        medians[repr(eps)] = float(np.median(Ts)) if Ts else None

    slope = None
    passed = not failures and rho is not None
    if passed:
        slope = fit_log_slope(spec.grid, [medians[repr(e)] for e in spec.grid])
        passed = slope <= spec.expected_slope + spec.slope_tolerance
        if spec.eta == 2:
            passed = passed and max(medians.values()) <= spec.max_T_cap
    return {
        "eta": spec.eta,
        "mode": spec.mode,
        "rho": rho,
        "grid": list(spec.grid),
        "median_T": medians,
        "max_T": max((c["T"] for c in cells if c["T"] is not None), default=None),
        "slope": slope,
        "expected_slope": spec.expected_slope,
        "slope_tolerance": spec.slope_tolerance,
        "passed": passed,
        "failures": failures,
        "cells": cells,
    }
