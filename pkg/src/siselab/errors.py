"""Exception hierarchy shared by every siselab module."""


class SiseError(Exception):
    """Base class for all library errors."""


class ShapeError(SiseError, ValueError):
    """Matrix dimensions are inconsistent."""


class AssumptionViolation(SiseError):
    """A structural rank assumption required by an estimator does not hold."""

    def __init__(self, message, assumption=None, step=None):
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)
        self.assumption = assumption
        self.step = step


class SingularityError(SiseError, ArithmeticError):
    """A matrix that must be inverted is numerically singular."""

    def __init__(self, message, condition=None, step=None):
        if condition is not None:
            message = f"{message} (condition estimate {condition:.3e})"
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)
        self.condition = condition
        self.step = step


class NotPositiveSemidefinite(SiseError, ValueError):
    """A covariance argument is not symmetric positive semidefinite."""


class UnstableEstimatorError(SiseError):
    """The requested operation needs a stable SISE configuration."""


class MarginalError(SiseError):
    """Zeros or modes sit on the unit circle."""


class ConvergenceError(SiseError, ArithmeticError):
    """A fixed-point iteration failed to converge."""


class NumericalLimitError(SiseError, ArithmeticError):
    """Covariance magnitudes exceeded what double precision can carry."""


class FileFormatError(SiseError, ValueError):
    """An input file could not be parsed; carries the position when known."""

    def __init__(self, message, path=None, line=None, column=None):
        where = "" if path is None else f"{path}"
        if line is not None:
            where += f":{line}:{column}"
        super().__init__(f"{where}: {message}" if where else message)
        self.path = path
        self.line = line
        self.column = column
