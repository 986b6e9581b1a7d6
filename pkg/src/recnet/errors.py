"""Exception hierarchy shared across the package."""

from __future__ import annotations


class RecNetError(Exception):
    """Base class for every error raised by recnet."""


class EmptyAfterNormalization(RecNetError, ValueError):
    pass


class DimensionMismatch(RecNetError, ValueError):
    pass


class ConfigError(RecNetError):
    """Invalid or incomplete configuration; raised before any work starts."""


class BackendError(RecNetError):
    """Any failure inside a prompt or embedding backend."""


class BackendUnavailable(BackendError):
    pass


class NetworkError(BackendError):
    pass


class RateLimited(BackendError):
    def __init__(self, message: str, retry_after: float | None = None) -> None:
        super().__init__(message)
        self.retry_after = retry_after


class MalformedResponse(BackendError):
    pass


class MalformedGradient(RecNetError, ValueError):
    pass


class UnparseableChoice(BackendError):
    pass


class UnparseableDecision(BackendError):
    pass


class NoAttributes(RecNetError, ValueError):
    pass


class NoRouters(RecNetError, ValueError):
    pass


class DegenerateSplit(RecNetError, ValueError):
    pass


class UnknownVariant(RecNetError, ValueError):
    pass


class PreconditionError(RecNetError, ValueError):
    pass


class ParseError(RecNetError, ValueError):
    def __init__(self, message: str, line: int | None = None) -> None:
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class MissingField(ParseError):
    pass


class UserTooShort(RecNetError, ValueError):
    pass


class TruthMissing(RecNetError, ValueError):
    pass


class MissingReport(RecNetError, FileNotFoundError):
    pass


class GoldenMismatch(RecNetError, AssertionError):
    def __init__(self, fixture: str, diff: list[str]) -> None:
        super().__init__(f"golden mismatch for {fixture}:\n" + "\n".join(diff))
        self.fixture = fixture
        self.diff = diff


class RunAborted(RecNetError):
    """A run failed mid-stream; ``snapshot`` holds the last consistent state."""

    def __init__(self, message: str, snapshot: dict, cause: BaseException | None = None) -> None:
        super().__init__(message)
        self.snapshot = snapshot
        self.cause = cause
