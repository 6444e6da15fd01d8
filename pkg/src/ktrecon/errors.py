"""Exception hierarchy shared across the package.

CLI exit codes: usage errors exit 1, data errors exit 2, numeric failures
exit 3 (see cli.py).
"""


class KtreconError(Exception):
    """Base class for all package errors."""


class DataError(KtreconError):
    """Problems with datasets, files, or on-disk formats."""


class CorruptHeaderError(DataError):
    """Sidecar/header JSON is unreadable or missing required fields."""


class SizeMismatchError(DataError):
    """Binary blob length disagrees with the dims declared in the header."""


class UnknownVersionError(DataError):
    """The file declares a format version this code does not understand."""


class ConfigError(KtreconError):
    """Invalid or inconsistent configuration."""


class NumericError(KtreconError):
    """Non-finite values or numeric breakdown during computation."""
