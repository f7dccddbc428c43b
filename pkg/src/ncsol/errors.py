"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid run configuration (CLI exit code 2)."""


class NumericalError(RuntimeError):
    """A computation failed to meet its accuracy contract (CLI exit code 3)."""


class StabilityError(NumericalError):
    """A truncation or recurrence monitor detected contamination."""


class QuadratureError(NumericalError):
    """Nested quadrature grids disagree beyond the requested tolerance."""
