"""Exception families shared across the package.

Each family carries the process exit code the CLI uses when the error
escapes to the top level, so failures in different pipeline stages are
distinguishable by exit status alone.
"""

from __future__ import annotations


class AffectPipeError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ConfigError(AffectPipeError):
    """Invalid configuration file, option value, or argument combination."""

    exit_code = 2


class MissingInputError(AffectPipeError):
    """A referenced input file does not exist."""

    exit_code = 3


class AlignmentError(AffectPipeError):
    """Tracks that must share a frame grid do not line up."""

    exit_code = 4


class TaskMismatchError(AffectPipeError):
    """Supplied labels or predictions are incompatible with the task."""

    exit_code = 5


class DataFormatError(AffectPipeError):
    """A CSV or model file violates its documented format."""

    exit_code = 6


class SolverError(AffectPipeError):
    """A linear system could not be solved reliably."""

    exit_code = 7
