"""Exception roots shared by every module."""

from __future__ import annotations


class AllocatorError(Exception):
    """Base class for every error raised by this package."""


class InputError(AllocatorError, ValueError):
    """Bad input: configuration, catalog, allocation or data file.

    The CLI maps these to exit code 1.
    """


class CheckFailed(AllocatorError):
    """A statistical or consistency check did not hold (CLI exit code 2)."""
