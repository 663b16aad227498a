class TrafficAssignmentError(Exception):
    """Base error. Carries a human readable detail and the CLI exit code."""

    exit_code = 1

    def __init__(self, detail: str, exit_code: int = None):
        super().__init__(detail)
        self.detail = detail
        if exit_code is not None:
            self.exit_code = exit_code


class ConfigError(TrafficAssignmentError):
    exit_code = 2


class DataFileError(TrafficAssignmentError):
    """Missing or malformed network / trips file."""

    exit_code = 2

    def __init__(self, detail: str, path: str = None, line: int = None):
        location = ""
        if path is not None:
            location = f"{path}"
            if line is not None:
                location += f":{line}"
            location += ": "
        super().__init__(f"{location}{detail}")
        self.path = path
        self.line = line


class NetworkValidationError(TrafficAssignmentError):
    exit_code = 2


class NumericalAbort(TrafficAssignmentError):
    """Training produced a non-finite loss."""

    exit_code = 3


class DomainError(TrafficAssignmentError):
    exit_code = 4


class StructuralError(TrafficAssignmentError):
    exit_code = 4


class NoPathError(TrafficAssignmentError):
    exit_code = 4


class DegenerateNetworkError(TrafficAssignmentError):
    exit_code = 4


class InvalidActionError(TrafficAssignmentError):
    exit_code = 4


class ConvergenceError(TrafficAssignmentError):
    """A study finished without reaching the outcome it checks for."""

    exit_code = 5
