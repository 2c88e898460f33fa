"""Exception types shared across the engine."""


class NumericalError(Exception):
    """Base class for failures of a numerical procedure."""


class NoConvergence(NumericalError):
    pass


class DegenerateLegendre(NumericalError):
    """Velocity Hessian of the adjoined Lagrangian is singular."""


class ChainTooDeep(NumericalError):
    """A constraint's multiplier does not appear within two time derivatives."""


class SingularConsistency(NumericalError):
    pass


class SingularMass(NumericalError):
    pass


class SingularConstraintBlock(NumericalError):
    pass


class ConstraintViolated(ValueError):
    pass


class MaxStepsExceeded(NumericalError):
    pass


class DriftAbort(NumericalError):
    def __init__(self, t: float, residual: float, threshold: float):
        self.t = t
        self.residual = residual
        self.threshold = threshold
        super().__init__(
            f"constraint drift {residual:.3e} exceeds {threshold:.3e} at t={t:.17g}")
