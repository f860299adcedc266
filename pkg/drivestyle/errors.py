"""Exception hierarchy for DriveStyle.

Library code raises these; the command layer turns them into exit codes and
machine-readable error lines.
"""


class DriveStyleError(Exception):
    """Base class for every error raised by the package."""


class ParameterDomainError(DriveStyleError, ValueError):
    """A parameter lies outside the domain of the operation."""


class DecompositionError(DriveStyleError, ValueError):
    """A matrix that must be symmetric positive-definite is not."""


class EmissionError(DriveStyleError, ArithmeticError):
    """An emission density cannot be evaluated for one state."""

    def __init__(self, state: int, message: str):
        super().__init__(f"state {state}: {message}")
        self.state = state


class FitError(DriveStyleError, ValueError):
    """A univariate distribution could not be fitted."""


class EventFileError(DriveStyleError, ValueError):
    """An event file, raw log or manifest failed to parse or validate."""

    def __init__(self, path: str, message: str, line: int | None = None):
        location = f"{path}:{line}" if line is not None else path
        super().__init__(f"{location}: {message}")
        self.path = path
        self.line = line


class InputError(DriveStyleError, ValueError):
    """Invalid dataset or arguments supplied by the caller."""


class MissingPathError(InputError):
    """A required input file or directory does not exist."""


class ContractError(DriveStyleError, RuntimeError):
    """An operation was called outside its contract."""


class SamplerError(DriveStyleError, RuntimeError):
    """A Gibbs sweep failed; carries the sweep index."""

    def __init__(self, iteration: int, cause: Exception):
        super().__init__(f"sweep {iteration}: {cause}")
        self.iteration = iteration
