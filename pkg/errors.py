"""
NoteFlow error hierarchy.
Every failure the pipeline can report maps to one class here, and every class
carries the exit code the CLI returns for it.
"""


class NoteFlowError(Exception):
    """Base class for all pipeline failures."""

    exit_code = 1

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class RejectedInputError(NoteFlowError, ValueError):
    """An argument violates a documented precondition."""

    exit_code = 2


class DimensionMismatchError(RejectedInputError):
    exit_code = 5


class MissingArtifactError(NoteFlowError, FileNotFoundError):
    exit_code = 3


class SchemaError(NoteFlowError):
    """Config or artifact document fails validation or has the wrong version."""

    exit_code = 4


class ConditioningError(NoteFlowError):
    """No rung of the sigma_reg ladder produced a well-conditioned matrix."""

    exit_code = 6


class TrainingError(NoteFlowError):
    """Every multistart initialization was infeasible."""

    exit_code = 6


class NumericalConsistencyError(NoteFlowError, ArithmeticError):
    exit_code = 6
