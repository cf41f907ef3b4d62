"""Exception hierarchy shared across the package."""


class ShootLabError(Exception):
    """Base class for all package errors."""


class DivergenceError(ShootLabError):
    """A numerical recursion produced non-finite or runaway values."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class PropagationDiverged(DivergenceError):
    pass


class AdjointDiverged(DivergenceError):
    pass


class DegenerateGridError(ShootLabError, ValueError):
    """Grid nodes are not strictly increasing."""


class SingularMetricError(ShootLabError, ArithmeticError):
    """The Newton metric is singular or indefinite."""


class ScheduleError(ShootLabError, ValueError):
    pass


class ConfigError(ShootLabError, ValueError):
    pass
