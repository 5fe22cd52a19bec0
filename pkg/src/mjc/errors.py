"""Exception hierarchy shared by all modules."""


class MJCError(Exception):
    """Base class for library errors."""


class ParameterError(MJCError, ValueError):
    """An argument is outside its admissible range."""


class UsageError(MJCError, ValueError):
    """Bad call shape, unknown name, empty input."""


class ModelEvaluationError(MJCError, ArithmeticError):
    """A model coefficient returned a non-finite value."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class StepSizeError(ParameterError):
    """Time step too coarse for the fast scale."""


class DivergenceError(MJCError, ArithmeticError):
    """A simulated state became non-finite."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class ResolutionError(MJCError):
    """A quadrature or grid is too coarse for the requested accuracy."""


class ConfigurationError(MJCError, ValueError):
    """Scheme or experiment configuration is inconsistent."""


class InstabilityError(MJCError, ArithmeticError):
    """A PDE solve blew up."""
