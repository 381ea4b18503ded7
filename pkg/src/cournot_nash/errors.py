"""Exception hierarchy shared by the solver modules."""


class CournotNashError(Exception):
    """Base class for all errors raised by this package."""


class InvalidConfigError(CournotNashError, ValueError):
    """Problem data or configuration violates a documented precondition."""


class DegenerateMeasureError(CournotNashError, ValueError):
    pass


class DivergenceUndefinedError(CournotNashError, ValueError):
    """KL(gamma | theta) with gamma not absolutely continuous w.r.t. theta."""


class InfeasibleProxError(CournotNashError, ValueError):
    pass


class RootNotBracketedError(CournotNashError, RuntimeError):
    pass


class NewtonNonconvergenceError(CournotNashError, RuntimeError):
    """Damped Newton gave up; carries the last iterate and its residual."""

    def __init__(self, message, iterate=None, residual=None):
        super().__init__(message)
        self.iterate = iterate
        self.residual = residual


class ProxFailure(CournotNashError, RuntimeError):
    """A prox step raised inside the Dykstra loop."""

    def __init__(self, message, cycle, prox_name):
        super().__init__(message)
        self.cycle = cycle
        self.prox_name = prox_name


class SinkhornNonconvergenceError(CournotNashError, RuntimeError):
    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


class OracleScopeError(CournotNashError, ValueError):
    pass


class PreconditionError(CournotNashError, ValueError):
    pass


class EvaluationError(CournotNashError, ValueError):
    pass
