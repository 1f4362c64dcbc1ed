"""Command-line front end.

Exit codes: 0 success, 1 audit found violations, 2 run did not converge,
3 invalid configuration, 4 evaluation or I/O failure, 5 Phase I ended at an
infeasible critical point.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness
from .adaptive import INFEASIBLE_CRITICAL, phase1_feasibility, solve
from .certify import DENSE_THRESHOLD, check_1o, check_2o
from .errors import ConfigError, ConstructionError, EvaluationError, ProxALError
from .problems import build_problem
from .solver import (
    decrease_audit,
    first_stop_index,
    kkt_residual_audit,
    lyapunov_descent_audit,
    multiplier_identity_audit,
)

EXIT_OK = 0
EXIT_AUDIT_FAILED = 1
EXIT_NOT_CONVERGED = 2
EXIT_CONFIG = 3
EXIT_EVALUATION = 4
EXIT_INFEASIBLE = 5

log = logging.getLogger("proxal")


def _rho_arg(text):
    if text == "adaptive":
        return text
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("expected 'adaptive' or a positive number") from None
    if not v > 0:
        raise argparse.ArgumentTypeError("rho must be positive")
    return v


def _seed_arg(text):
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser():
    parser = argparse.ArgumentParser(prog="proxal", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="run configuration JSON")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--seed", type=_seed_arg)
        p.add_argument("--mode", choices=("1o", "2o"))
        p.add_argument("--rho", type=_rho_arg, help="'adaptive' or a fixed penalty")
        p.add_argument("--audit", action="store_true", default=None)

    common(sub.add_parser("solve", help="solve a configured problem"))
    common(sub.add_parser("audit", help="solve with stored iterates and run all audits"))
    p1 = sub.add_parser("phase1", help="minimize ||c||^2 from the configured start")
    common(p1)
    p1.add_argument("--phase1-rho", type=float, default=None,
                    help="penalty used for the feasibility threshold (default: fixed rho or 100)")
    chk = sub.add_parser("check", help="certify a point/multiplier pair")
    chk.add_argument("--point", required=True, help="JSON with x, optional lambda, epsilon")
    chk.add_argument("--config", help="run configuration naming the problem")
    chk.add_argument("--out", help="also write certificate.json here")
    sc = sub.add_parser("scaling-study", help="measure outer iterations across an epsilon grid")
    sc.add_argument("--config", required=True, help="scaling-study JSON")
    sc.add_argument("--out", help="output directory for study.json")
    sc.add_argument("--mode", choices=("1o", "2o"))
    sc.add_argument("--seed", type=_seed_arg)
    sc.add_argument("--rho", type=_rho_arg)
    return parser


def _run_config(args):
    cfg = harness.load_run_config(args.config)
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.mode is not None:
        updates["mode"] = args.mode
    if args.rho is not None:
        updates["rho"] = args.rho if args.rho == "adaptive" else {"fixed": args.rho}
    if args.audit:
        updates["audit"] = True
    if args.out is not None:
        updates["out"] = args.out
    if updates:
        cfg = harness.load_run_config({**cfg.model_dump(), **updates})
    return cfg


def _x0(cfg, problem):
    if cfg.x0 is None:
        return None
    x0 = np.array(cfg.x0, dtype=float)
    if x0.shape != (problem.n,):
        raise ConfigError(f"x0 must have length {problem.n}")
    return x0


def _emit(obj, out_dir, name):
    text = json.dumps(obj, indent=2)
    print(text)
    if out_dir is not None:
        path = Path(out_dir)
        path.mkdir(parents=True, exist_ok=True)
        (path / name).write_text(text + "\n")


def _cmd_solve(args, audit=False):
    cfg = _run_config(args)
    if audit and not cfg.audit:
        cfg = harness.load_run_config({**cfg.model_dump(), "audit": True})
    problem = cfg.build()
    result = solve(problem, cfg.solver_config(), _x0(cfg, problem), cfg.schedule())
    record = result.record
    out = cfg.out or "."
    extra = harness.adaptive_extra(result)

    code = EXIT_OK
    if audit:
        report = {"lyapunov_violations": [], "decrease_violations": []}
        if record.xs is not None:
            report = {
                "lyapunov_violations": [v.__dict__ for v in lyapunov_descent_audit(record, problem)],
                "decrease_violations": [v.__dict__ for v in decrease_audit(record, problem)],
                "kkt_residual_gap": kkt_residual_audit(record, problem),
                "multiplier_identity_error": multiplier_identity_audit(record, problem),
                "first_stop_index": first_stop_index(record, problem),
            }
        extra["audit"] = report
        if report["lyapunov_violations"] or report["decrease_violations"]:
            code = EXIT_AUDIT_FAILED
    harness.persist_run(record, out, cfg.model_dump(mode="json"), extra)
    print(json.dumps({"status": result.status, "stop_index": record.stop_index, "out": out}))

    if result.status == INFEASIBLE_CRITICAL:
        return EXIT_INFEASIBLE
    if not result.converged:
        return EXIT_NOT_CONVERGED
    return code


def _cmd_phase1(args):
    cfg = _run_config(args)
    problem = cfg.build()
    x0 = _x0(cfg, problem)
    if x0 is None:
        x0 = problem.x0
    rho = args.phase1_rho or cfg.rho_value() or 100.0
    res = phase1_feasibility(
        problem, x0, rho, cfg.epsilon, cfg.adaptive.C0,
        inner=cfg.solver_config().inner, seed=cfg.seed,
    )
    out = {
        "x": res.x.tolist(),
        "feasible": res.feasible,
        "c_norm": res.c_norm,
        "grad_norm": res.grad_norm,
        "threshold": res.threshold,
        "iterations": res.iterations,
        "hvp_count": res.hvp_count,
        "status": res.status,
    }
    _emit(out, cfg.out, "phase1.json")
    return EXIT_OK if res.feasible else EXIT_INFEASIBLE


def _cmd_check(args):
    point = harness._read_json(args.point)
    unknown = set(point) - {"x", "lambda", "epsilon", "problem"}
    if unknown:
        raise ConfigError(f"unknown keys in point file: {sorted(unknown)}")
    if "x" not in point or "epsilon" not in point:
        raise ConfigError("point file needs 'x' and 'epsilon'")
    if "problem" in point:
        spec = harness.ProblemSpec.model_validate(point["problem"])
        problem = build_problem(spec.name, spec.params)
    elif args.config:
        problem = harness.load_run_config(args.config).build()
    else:
        raise ConfigError("name the problem in the point file or pass --config")
    x = np.array(point["x"], dtype=float)
    if x.shape != (problem.n,):
        raise ConfigError(f"x must have length {problem.n}")
    lam = point.get("lambda", "estimate")
    eps = float(point["epsilon"])
    if problem.n <= DENSE_THRESHOLD:
        cert = check_2o(problem, x, lam, eps)
    else:
        cert = check_1o(problem, x, lam, eps)
    _emit(cert.to_dict(), args.out, "certificate.json")
    return EXIT_OK


def _cmd_scaling(args):
    spec = harness.load_scaling_spec(args.config)
    updates = {}
    if args.mode is not None:
        updates["mode"] = args.mode
    if args.seed is not None:
        updates["seed_base"] = args.seed
    if args.rho is not None:
        updates["rho"] = None if args.rho == "adaptive" else args.rho
    if updates:
        spec = harness.load_scaling_spec({**spec.model_dump(), **updates})
    report = harness.scaling_study(spec)
    _emit(report, args.out, "study.json")
    return EXIT_OK if report["passed"] else EXIT_NOT_CONVERGED


_COMMANDS = {
    "solve": _cmd_solve,
    "audit": lambda a: _cmd_solve(a, audit=True),
    "phase1": _cmd_phase1,
    "check": _cmd_check,
    "scaling-study": _cmd_scaling,
}


def cli_main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr,
    )
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, ConstructionError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (EvaluationError, FloatingPointError, OSError) as exc:
        print(f"evaluation/I-O error: {exc}", file=sys.stderr)
        return EXIT_EVALUATION
    except ProxALError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EVALUATION


def main():
    sys.exit(cli_main())
