"""Exception hierarchy shared across the solver."""


class ProxALError(Exception):
    """Base class for every error raised by this package."""


class EvaluationError(ProxALError):
    """An evaluator returned NaN/Inf (or raised) at the requested point."""

    def __init__(self, message, coordinate=None):
        super().__init__(message)
        self.coordinate = coordinate


class ConstructionError(ProxALError, ValueError):
    """Problem data violates a structural requirement (e.g. rank-deficient A)."""


class ConfigError(ProxALError, ValueError):
    pass


class MissingConstantError(ProxALError):
    """A constants-ledger field needed by a formula was not supplied."""

    def __init__(self, field):
        super().__init__(f"constant {field!r} is unknown; supply it in the ledger")
        self.field = field


class RankDeficiencyError(ProxALError):
    """The constraint Jacobian is (numerically) rank deficient at the point."""

    def __init__(self, sigma_min, sigma_max):
        super().__init__(
            f"constraint Jacobian is rank deficient: sigma_min={sigma_min:.3e}, "
            f"sigma_max={sigma_max:.3e}"
        )
        self.sigma_min = sigma_min
        self.sigma_max = sigma_max


class UnsupportedSizeError(ProxALError):
    """Dense verification was requested above the configured size threshold."""
