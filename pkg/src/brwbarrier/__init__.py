"""Branching random walks killed above a cube-root barrier."""

__version__ = "0.1.0"

from ._accel import backend_name
from .constants import a_critical, b_roots, tube_constant
from .errors import (BRWError, ConfigError, DegenerateFit, DomainError, InsufficientHits,
                     NumericalFailure, SizeLimit, ToleranceNotMet, Unclassified, UnsupportedLaw)
from .laws import FiniteSupport, PoissonGaussian, critical_gaussian, criticality_check
from .profile_ode import blow_down_time, extinction_rate, solve_profile
from .rng import RandomStream

__all__ = [
    "__version__", "backend_name", "a_critical", "b_roots", "tube_constant",
    "BRWError", "ConfigError", "DegenerateFit", "DomainError", "InsufficientHits",
    "NumericalFailure", "SizeLimit", "ToleranceNotMet", "Unclassified", "UnsupportedLaw",
    "FiniteSupport", "PoissonGaussian", "critical_gaussian", "criticality_check",
    "blow_down_time", "extinction_rate", "solve_profile", "RandomStream",
]
