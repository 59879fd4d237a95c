"""Loewner evolution in standard slit domains driven by the BMD Poisson kernel."""

from .config import settings
from .errors import (AmbiguousSideError, DegenerateGeometryError, NumericalError,
                     PoleError, SlitflowError, StepRejectedError, StiffnessError,
                     UnconvergedError, ValidationError)
from .geometry import SlitVector, make_slits

__version__ = "0.1.0"

__all__ = ["settings", "AmbiguousSideError", "DegenerateGeometryError", "NumericalError",
           "PoleError", "SlitflowError", "StepRejectedError", "StiffnessError", "UnconvergedError",
           "ValidationError", "SlitVector", "make_slits"]
