"""Exception types raised across the package."""


class BsdeQmleError(Exception):
    """Base class for all package errors."""


class ConfigError(BsdeQmleError, ValueError):
    """Invalid or missing configuration value.

    ``key`` names the offending entry when known so the CLI can report it.
    """

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class UnknownDriver(BsdeQmleError, NameError):
    pass


class DegenerateZ(BsdeQmleError, ValueError):
    pass


class DimError(BsdeQmleError, ValueError):
    pass


class InsufficientData(BsdeQmleError, ValueError):
    pass


class AllDegenerate(BsdeQmleError, RuntimeError):
    pass


class SingularSystem(BsdeQmleError, RuntimeError):
    pass


class OptFailure(BsdeQmleError, RuntimeError):
    pass


class MetricUndefined(BsdeQmleError, ValueError):
    pass


class DegenerateGamma(BsdeQmleError, ValueError):
    pass


class SimulationBlowup(BsdeQmleError, RuntimeError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
