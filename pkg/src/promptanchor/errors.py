"""Exception hierarchy shared by the library and the CLI.

Each class carries the process exit code the CLI maps it to.
"""


class PromptAnchorError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class UsageError(PromptAnchorError):
    """Bad arguments or an unusable combination of options."""

    exit_code = 2


class FormatError(PromptAnchorError):
    """A file failed structural parsing: bad magic, version, or corruption."""

    exit_code = 3


class ValidationError(PromptAnchorError):
    """Inputs parse but violate a documented invariant or precondition."""

    exit_code = 4


class AlignmentError(ValidationError):
    """Row-aligned inputs (stores, datasets) do not line up."""

    exit_code = 4


class NumericError(PromptAnchorError):
    """Internal numeric failure, e.g. a non-finite training loss."""

    exit_code = 5
