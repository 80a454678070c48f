"""Error types shared across the platform.

Validation errors subclass MeepError so callers can catch the family with one
except clause; signals that carry structured payloads (ReplayDivergence) keep
their details as attributes.
"""

from __future__ import annotations


class MeepError(Exception):
    """Base class for every error raised by this package."""


class EmptyUtterance(MeepError):
    """Utterance text was empty or whitespace-only."""


class DanglingReference(MeepError):
    """A token or variable-field reference points at nothing in the session."""


class SessionClosed(MeepError):
    """An action arrived after the session was closed."""


class ArityError(MeepError):
    """Wrong number of arguments for an API call or template."""


class SlotTypeError(MeepError):
    """A filler's field kind is not allowed by the slot's type set."""


class PatternError(MeepError):
    """Template pattern is empty or has malformed placeholders."""


class EmptyQuery(MeepError):
    """A place query resolved to the empty string."""


class NotFound(MeepError):
    """No place matched the query above the ranking threshold."""


class ApiError(MeepError):
    """A backend call failed; the failure is recorded and the session continues."""


class SchemaError(MeepError):
    """A serialized log or wire message violates the documented format."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message)
        self.line = line


class ReplayDivergence(MeepError):
    """Re-executing a log produced a value different from the recorded one."""

    def __init__(self, entry_index: int, field: str, expected: object, actual: object):
        super().__init__(
            f"entry {entry_index}: {field!r} diverged (expected {expected!r}, got {actual!r})"
        )
        self.entry_index = entry_index
        self.field = field
        self.expected = expected
        self.actual = actual


class UnalignableQuery(MeepError):
    """Gold query tokens cannot be located in the prefix user utterances."""


class ConstraintViolation(MeepError):
    """A gold parameter was filtered out by the mined type constraints."""


class UnfittedPredictor(MeepError):
    """A predictor that requires fitting was used before fit()."""


class SkippedPoint(MeepError):
    """A learning-curve fraction produced zero training dialogs."""


class CreateFailed(MeepError):
    """Session creation failed (bad coordinates or unresolvable address)."""
