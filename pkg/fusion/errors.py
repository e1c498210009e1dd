"""Exception types raised by the fusion package."""


class FusionError(Exception):
    """Base class for all estimator/simulator errors."""


class InputError(FusionError, ValueError):
    """Caller supplied data that violates a documented precondition."""


class DegenerateInputError(InputError):
    """Input is well-formed but geometrically degenerate."""


class InsufficientObservationsError(InputError):
    """Too few measurements to determine the requested unknowns."""


class NonConvergenceError(FusionError, RuntimeError):
    """An iterative solver failed to reach its tolerance."""


class ConfigError(InputError):
    """Invalid configuration value; `key` names the offending entry."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key
