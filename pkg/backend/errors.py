class DriveThroughError(Exception):
    """Base class for every error raised by the gate design engine"""


class ConfigError(DriveThroughError):
    """Configuration could not be used"""


class ConfigParseError(ConfigError):
    """Malformed configuration or pulse document"""


class ConfigValidationError(ConfigError):
    """Well-formed document that violates a physical invariant"""


class PhysicsError(DriveThroughError):
    """A physics pipeline failed to produce a trustworthy result"""


class ConvergenceError(PhysicsError):
    """Iterative solver did not converge within its budget"""


class IntegrationError(PhysicsError):
    """Adaptive ODE integration failed (step-size underflow or similar)"""


class ImaginaryFrequencyError(PhysicsError):
    """Zigzag mode frequency squared became non-positive"""


class LeakageError(PhysicsError):
    """Fock-space truncation too small: population reached the top levels"""


class ThermalTruncationError(PhysicsError):
    """Thermal number-state cut does not fit inside the Fock truncation"""


class IllConditionedPhaseError(PhysicsError):
    """Branch overlap too small for its phase to be meaningful"""


class ZeroPhaseError(PhysicsError):
    """Pulse accumulates no differential phase, so it cannot be calibrated"""


class PhaseSignError(PhysicsError):
    """Accumulated phase has the wrong sign for the target gate"""


class OptimizationError(PhysicsError):
    """Every optimizer start failed"""


class GridMismatchError(DriveThroughError, ValueError):
    """Trajectories were not sampled on a common time grid"""
