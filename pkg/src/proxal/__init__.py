"""Proximal augmented Lagrangian solver for nonconvex equality-constrained problems."""

from .adaptive import (
    AdaptiveResult,
    AdaptiveSchedule,
    Phase1Result,
    adaptive_solve,
    phase1_feasibility,
    schedule,
    solve,
)
from .auglag import ProxSubproblem, al_gradient, al_value, lyapunov
from .certify import Certificate, check_1o, check_2o, check_subproblem_2o, estimate_multiplier
from .errors import (
    ConfigError,
    ConstructionError,
    EvaluationError,
    MissingConstantError,
    ProxALError,
    RankDeficiencyError,
    UnsupportedSizeError,
)
from .newton_cg import InnerTolerances, SmoothFunction, capped_cg, min_eig_oracle, newton_cg_solve
from .problems import (
    ConstantsLedger,
    ProblemInstance,
    build_problem,
    fd_check_gradient,
    fd_check_hvp,
    make_infeasible_demo,
    make_linear_qp,
    make_quadratic,
    make_rosenbrock_sphere,
    make_sphere_linear,
    register_problem,
)
from .solver import (
    InnerSettings,
    RunRecord,
    SolverConfig,
    classic_al_solve,
    proximal_al_solve,
    rho_lower_bound,
)

__all__ = [name for name in dir() if not name.startswith("_")]
