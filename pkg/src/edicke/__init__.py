"""Mean-field, exact-diagonalization and THz analysis tools for the extended
Dicke (g-J) model of an Er/Fe orthoferrite."""

__version__ = "0.1.0"

from .constants import CONST, PhysConstants, convert_energy
from .params import (ExternalConditions, MicroParams, ParameterError, ReducedParams,
                     SolverSettings)
from .config import ConfigError, load_config
from .mfcore import SolverError

__all__ = ["CONST", "PhysConstants", "convert_energy", "ExternalConditions", "MicroParams",
           "ParameterError", "ReducedParams", "SolverSettings", "ConfigError", "load_config",
           "SolverError", "__version__"]
