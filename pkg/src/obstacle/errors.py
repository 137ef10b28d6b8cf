"""Exception hierarchy shared by the solver modules."""


class ObstacleError(Exception):
    """Base class for every error raised by this package."""


class NoBracket(ObstacleError, ValueError):
    """f(t)/t never reaches 1/k on the search interval."""


class HypothesisViolated(ObstacleError, ValueError):
    def __init__(self, check, witness=None):
        self.check = check
        self.witness = witness
        super().__init__(f"hypothesis {check} violated at {witness}")


class SingularAssembly(ObstacleError):
    pass


class Infeasible(ObstacleError, ValueError):
    pass


class SolverFailure(ObstacleError):
    """Solver error that still carries the best iterate as ``report``."""

    def __init__(self, message, report=None):
        self.report = report
        super().__init__(message)


class MaxIterExceeded(SolverFailure):
    pass


class BallViolation(SolverFailure):
    pass


class JacobianSingular(SolverFailure):
    pass


class NoDescent(SolverFailure):
    pass


class EndpointNotFound(SolverFailure):
    pass


class PathCollapse(SolverFailure):
    pass


class StallDetected(SolverFailure):
    pass
