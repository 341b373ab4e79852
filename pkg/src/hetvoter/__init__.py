"""Voter dynamics in a random binary field: finite-N simulation, mean-field
limit, large deviations, exact first-passage times and Gaussian fluctuations."""

__version__ = "0.1.0"

from ._accel import BACKEND
from .errors import DegenerateEquilibria, NumericalError, ValidationError
from .model import AggregateState, Environment, ModelParams, RateQuad

__all__ = [
    "__version__",
    "BACKEND",
    "ModelParams",
    "Environment",
    "AggregateState",
    "RateQuad",
    "ValidationError",
    "NumericalError",
    "DegenerateEquilibria",
]
