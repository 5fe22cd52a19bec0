"""Averaging for slow-fast controlled jump diffusions driven by stable noise."""
from .errors import (ConfigurationError, DivergenceError, InstabilityError, MJCError, ModelEvaluationError,
                     ParameterError, ResolutionError, StepSizeError, UsageError)
from .model import BENCHMARKS, AssumptionReport, ControlSet, ProblemSpec, builtin_benchmark, validate_assumptions

__version__ = "0.1.0"
