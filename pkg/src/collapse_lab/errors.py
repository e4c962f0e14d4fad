"""Exception taxonomy shared by all modules.

Each class carries the CLI exit code it maps to.
"""


class CollapseLabError(Exception):
    exit_code = 1


class ContractError(CollapseLabError, ValueError):
    """Caller violated a documented precondition (shapes, dimensions, ranges)."""

    exit_code = 4


class RegimeError(ContractError):
    """Inputs fall outside the regime where a formula is valid."""

    exit_code = 4


class SchedulingError(ContractError):
    """A bubble advance would break the spacelike condition of a surface."""

    exit_code = 4

    def __init__(self, message, cells=None):
        super().__init__(message)
        self.cells = cells


class NumericError(CollapseLabError, ArithmeticError):
    """Non-finite amplitudes, eigensolver failure and similar numeric breakdowns."""

    exit_code = 3

    def __init__(self, message, step=None, trajectory=None):
        super().__init__(message)
        self.step = step
        self.trajectory = trajectory


class ConfigError(CollapseLabError, ValueError):
    exit_code = 2

    def __init__(self, message, line=None, key=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
        self.key = key
