"""Hard balls on the flat torus: event-driven flow, tangent dynamics,
collision graphs and the hyperbolicity estimates built on them."""
from .errors import HardBallError
from .flow import simulate
from .phase_space import PhasePoint, SystemParams, ToleranceSet, normalize_state

__all__ = ["HardBallError", "PhasePoint", "SystemParams", "ToleranceSet", "normalize_state", "simulate"]
__version__ = "0.1.0"
