"""Exception types shared across the package."""


class TessocError(Exception):
    """Base class for all package-specific errors."""


class InvalidInputError(TessocError, ValueError):
    """An operation received arguments outside its contract."""


class InvalidConfigError(TessocError, ValueError):
    """Configuration values are inconsistent or unusable."""


class NumericalError(TessocError, RuntimeError):
    """A numerical procedure failed to produce a usable result."""


class FilterDivergenceError(NumericalError):
    """The state estimate left the finite range; caller decides reset policy."""


class StiffnessError(NumericalError):
    """The adaptive integrator's step size collapsed."""
