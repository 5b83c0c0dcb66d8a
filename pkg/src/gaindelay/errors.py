"""Exception hierarchy shared by all modules.

Each class maps onto one CLI exit code (see :mod:`gaindelay.cli`).
"""


class GainDelayError(Exception):
    """Base class for all package errors."""


class ConfigError(GainDelayError, ValueError):
    """Invalid parameters or configuration; ``path`` names the offending field."""

    def __init__(self, message, path=None):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}" if path else message)


class InputDataError(GainDelayError, ValueError):
    """Malformed input file, with optional line/column position."""

    def __init__(self, message, source=None, line=None, column=None):
        self.source, self.line, self.column = source, line, column
        where = ""
        if source is not None:
            where = str(source)
            if line is not None:
                where += f":{line}"
                if column is not None:
                    where += f":{column}"
            where += ": "
        super().__init__(where + message)


class SolverError(GainDelayError, RuntimeError):
    """Numerical propagation failed to preserve its structural invariants."""


class ExtractionError(GainDelayError, RuntimeError):
    """A delay or fit could not be extracted from the supplied data."""


class NumericalPrecisionError(GainDelayError, ArithmeticError):
    """A computation became too ill-conditioned to trust."""
