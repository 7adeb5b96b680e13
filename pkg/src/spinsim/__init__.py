"""Deterministic simulation of a spinning-base servicing robot capturing and
detumbling a spin-stabilized satellite: spin-matching, coordinated capture,
and constrained reaction-wheel momentum transfer."""

from . import control, dynamics, model, sim, spatial
from .errors import ConfigError, InfeasibleError, KinematicsError, SimulationError

__version__ = "0.1.0"

__all__ = [
    "control", "dynamics", "model", "sim", "spatial",
    "ConfigError", "InfeasibleError", "KinematicsError", "SimulationError",
    "__version__",
]
