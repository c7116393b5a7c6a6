"""Exception hierarchy shared by the simulator, tangent and certificate code."""


class HardBallError(Exception):
    """Base class for every error raised by this package."""


class ZeroEnergy(HardBallError):
    pass


class InadmissibleConfiguration(HardBallError):
    pass


class SingularOrbit(HardBallError):
    """Orbit hits a (near) multiple or grazing collision."""


class Grazing(SingularOrbit):
    pass


class CollisionFlood(SingularOrbit):
    """Too many collisions packed into a too short time window."""


class NotInContact(HardBallError):
    pass


class Receding(HardBallError):
    pass


class HypothesisUnmet(HardBallError):
    pass


class DegenerateSpan(HardBallError):
    """Relative velocity parallel to the contact normal (head-on impact)."""


class ZeroRelativeVelocity(HardBallError):
    pass


class NoConvergence(HardBallError):
    pass


class BudgetExhausted(HardBallError):
    pass


class SamplingFailed(HardBallError):
    pass


class ConfigError(HardBallError):
    pass
