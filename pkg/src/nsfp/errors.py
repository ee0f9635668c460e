"""Exception hierarchy shared by the solver, the harness and the CLI.

Each class carries the process exit code the CLI maps it to.
"""


class NsfpError(Exception):
    exit_code = 3


class DomainError(NsfpError, ValueError):
    """Argument outside the mathematical domain of a function."""

    exit_code = 3


class NumericalError(NsfpError, RuntimeError):
    """An iterative procedure failed or a NaN appeared."""

    exit_code = 3

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history) if history is not None else []


class ConfigError(NsfpError, ValueError):
    """Invalid configuration value or file."""

    exit_code = 2

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class InvariantViolation(NsfpError, RuntimeError):
    """A monitored invariant (volume floor, positivity, ...) broke during a run."""

    exit_code = 4
