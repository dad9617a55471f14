"""Exception hierarchy shared by all stages."""


class SlipControlError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(SlipControlError, ValueError):
    """Invalid configuration or out-of-range parameter."""


class DataError(SlipControlError, ValueError):
    """Input data violating a precondition (flux balance, divergence, ...)."""


class ShapeError(SlipControlError, ValueError):
    """Fields living on different grids were combined."""


class GeometryError(SlipControlError):
    """A point or particle ended up where the geometry does not allow it."""


class SolverError(SlipControlError, RuntimeError):
    """A linear solve did not reach its residual target."""

    def __init__(self, message, residual=None):
        super().__init__(message if residual is None else f"{message} (residual {residual:.3e})")
        self.residual = residual


class StepSizeError(ConfigError):
    """Time step violates the declared stability bound."""


class DomainSizeError(SlipControlError):
    """Truncated fast-variable domain too short for the profile."""


class FeasibilityError(SlipControlError):
    """The moment design cannot be realized (uncovered characteristics)."""


class BasisError(SlipControlError):
    """Injected-profile moment matrix is singular."""


class ResolutionError(SlipControlError):
    """Grid too coarse for the requested moment order."""


class UnsupportedScenarioError(SlipControlError):
    """Coefficient class outside the validated set."""


class RangeError(SlipControlError, ValueError):
    """Requested time is not covered by a report."""
