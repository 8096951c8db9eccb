"""Errors with the exit codes the CLI maps them to (same table as the
classification engine's CLI)."""


class ExportError(Exception):
    exit_code = 1


class UsageError(ExportError):
    exit_code = 2


class InputFormatError(ExportError):
    exit_code = 3


class InputValidationError(ExportError):
    exit_code = 4


class EncoderError(ExportError):
    """Encoder failed to load or produced unusable output."""

    exit_code = 5
