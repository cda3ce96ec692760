"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class DagarError(Exception):
    exit_code = 1


class ValidationError(DagarError, ValueError):
    """Bad input: sizes, parameter ranges, malformed files."""

    exit_code = 2


class ParameterError(ValidationError):
    pass


class StructureError(ValidationError):
    """Graph has the wrong shape for the requested operation."""


class ParseError(ValidationError):
    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.path = path
        self.line = line


class NumericalError(DagarError, ArithmeticError):
    exit_code = 3


class NotPositiveDefiniteError(NumericalError):
    def __init__(self, message, pivot=None):
        super().__init__(message)
        self.pivot = pivot


class VerificationError(DagarError):
    exit_code = 4
