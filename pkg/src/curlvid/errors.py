"""Shared exception types.

Plain ``ValueError`` is used for argument/config violations; the classes here
exist where callers (mainly the CLI) need to distinguish failure modes.
"""

from __future__ import annotations


class FormatError(Exception):
    """A file failed to parse or validate.

    Carries machine-readable location info: ``path`` is the offending file,
    ``location`` is a byte offset (binary formats) or a key path like
    ``segments[3].labe`` (JSON formats).
    """

    def __init__(self, message: str, path=None, location=None):
        self.path = str(path) if path is not None else None
        self.location = location
        detail = message
        if self.path is not None:
            detail = f"{self.path}: {detail}"
        if location is not None:
            detail = f"{detail} (at {location})"
        super().__init__(detail)


class NumericError(RuntimeError):
    """Training produced a non-finite value; ``diagnostics`` holds a state dump."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
