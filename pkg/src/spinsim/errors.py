"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration input. Messages name the offending field."""


class KinematicsError(RuntimeError):
    """Inverse kinematics failed (unreachable pose or singular configuration)."""


class InfeasibleError(RuntimeError):
    """Detumbling torque allocation has no feasible decay rate at the current state."""


class SimulationError(RuntimeError):
    """Numerical failure (NaN/Inf state) or mission non-convergence."""
