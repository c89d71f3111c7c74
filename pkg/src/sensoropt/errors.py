"""Exception types raised across the package."""


class SensorOptError(Exception):
    """Base class for all package errors."""


# model
class NonSPDError(SensorOptError):
    """Assembled stiffness is not symmetric positive definite."""


class SolveFailure(SensorOptError):
    pass


class UnknownParameterComponent(SensorOptError, KeyError):
    pass


# sensors
class LocationOutOfDomain(SensorOptError, ValueError):
    pass


class EmptyConfig(SensorOptError, ValueError):
    pass


class NotDifferentiable(SensorOptError):
    """Measurement operator is not differentiable w.r.t. the requested design parameter."""


# design / placement
class SingularFisher(SensorOptError):
    """Fisher (or Gram) matrix failed Cholesky: configuration is locally unidentifiable."""


class NoConvergence(SensorOptError):
    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class EmptyPool(SensorOptError, ValueError):
    pass


class CombinatorialBlowup(SensorOptError):
    pass


class NoDescent(SensorOptError):
    pass


# bar1d
class NotIncreasing(SensorOptError, ValueError):
    pass


class IndexOutOfRange(SensorOptError, IndexError):
    pass
