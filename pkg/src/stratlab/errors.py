"""Exception types shared by the lab modules."""


class StratlabError(Exception):
    """Base class for all errors raised by the package."""


class ArgumentError(StratlabError, ValueError):
    pass


class DomainError(ArgumentError):
    pass


class GridRangeError(StratlabError, IndexError):
    pass


class NumericError(StratlabError, ArithmeticError):
    pass


class SingularModeError(ArgumentError):
    """Raised for operations undefined at xi = 0."""


class DegenerateLineError(ArgumentError):
    """Raised for operations undefined on the vertical line xi_h = 0."""


class ConditioningError(NumericError):
    def __init__(self, message, mode=None, condition=None):
        super().__init__(message)
        self.mode = mode
        self.condition = condition


class NotApplicableError(StratlabError):
    """Signals that a quantity is not defined for the given parameters."""


class AccuracyError(NumericError):
    def __init__(self, message, estimate=None, error=None):
        super().__init__(message)
        self.estimate = estimate
        self.error = error


class DivergenceError(NumericError):
    def __init__(self, message, last_stable_time=None):
        super().__init__(message)
        self.last_stable_time = last_stable_time


class CFLError(NumericError):
    def __init__(self, message, suggested_dt=None):
        super().__init__(message)
        self.suggested_dt = suggested_dt


class ConsistencyError(ArgumentError):
    pass


class ConfigError(ArgumentError):
    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path
