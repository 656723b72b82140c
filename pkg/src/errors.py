"""
Exception hierarchy for the workbench.

InputError subclasses map to CLI exit code 1, NumericalError subclasses to 2.
"""

from typing import Any, Optional


class WorkbenchError(Exception):
    """Root of every error raised on purpose by the package"""

    exit_code = 1

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.details = details

    def __getattr__(self, name: str) -> Any:
        details = self.__dict__.get("details", {})
        if name in details:
            return details[name]
        raise AttributeError(name)


class InputError(WorkbenchError):
    exit_code = 1


class GeometryError(InputError):
    pass


class PartitionError(InputError):
    pass


class CompatibilityError(InputError):
    pass


class CoefficientError(InputError):
    pass


class DomainError(InputError):
    pass


class ConfigError(InputError):
    pass


class NumericalError(WorkbenchError):
    exit_code = 2


class ConvergenceError(NumericalError):
    def __init__(self, message: str, residual: Optional[float] = None, **details: Any):
        super().__init__(message, residual=residual, **details)


class SolverError(NumericalError):
    pass
