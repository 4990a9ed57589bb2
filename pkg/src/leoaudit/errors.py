"""Exception hierarchy. Each class carries the CLI exit status it maps to."""

from __future__ import annotations

from contextlib import contextmanager


class AuditError(Exception):
    """Base class for every error raised by leoaudit."""

    exit_code = 4
    stage: str | None = None


class ConfigError(AuditError, ValueError):
    exit_code = 1


class EmptyInputError(AuditError, ValueError):
    exit_code = 4


class DomainError(AuditError, ValueError):
    exit_code = 4


class UnreadableStreamError(AuditError, OSError):
    """The byte stream could not be read or decoded as UTF-8."""

    exit_code = 2


class FormatError(AuditError, ValueError):
    """Input does not look like the expected log format."""

    exit_code = 2


class PreconditionError(AuditError, ValueError):
    exit_code = 2


class AmbiguousPortalStateError(AuditError, ValueError):
    """Two portal events share a timestamp but disagree on the state."""

    exit_code = 2


class InsufficientDataError(AuditError, ValueError):
    exit_code = 2


class NoSeparationError(AuditError, ValueError):
    """High-speed and low-rate clusters overlap; no threshold can be proposed."""

    exit_code = 3

    def __init__(self, message: str, report: dict | None = None):
        super().__init__(message)
        self.report = report or {}


@contextmanager
def stage(name: str):
    """Tag any AuditError escaping the block with the pipeline stage name."""
    try:
        yield
    except AuditError as exc:
        if getattr(exc, "stage", None) is None:
            exc.stage = name
        raise
