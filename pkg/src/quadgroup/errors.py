"""Exception hierarchy shared by all modules."""


class QuadGroupError(Exception):
    """Base class for library errors."""


class ValidationError(QuadGroupError, ValueError):
    """Bad user input: malformed files, invalid groups, out-of-range options."""


class SolverError(QuadGroupError, RuntimeError):
    """A numerical routine failed to produce a certified solution."""


class ConvergenceError(SolverError):
    """Iteration cap reached before the stopping rule was met."""

    def __init__(self, message, gap=float("nan")):
        super().__init__(message)
        self.gap = gap


class InfeasibleError(SolverError):
    """The projection program stayed infeasible after tuning escalation."""

    def __init__(self, message, violation=float("nan")):
        super().__init__(message)
        self.violation = violation
