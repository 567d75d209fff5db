"""Exceptions shared by the service clients and pipeline stages."""

from __future__ import annotations


class PipelineError(Exception):
    """Base class for every error raised by this package."""


class ServiceUnavailable(PipelineError):
    """A remote model or KG service could not be reached."""

    def __init__(self, message: str, attempt_count: int = 1):
        super().__init__(message)
        self.attempt_count = attempt_count


class DeadlineExceeded(PipelineError):
    """A request or a per-sample budget ran out of time."""


class MalformedResponse(PipelineError):
    """A service answered with a body that does not follow its wire contract."""


def error_class(exc: BaseException) -> str:
    """Short class name recorded in answer files when a stage fails closed."""
    return type(exc).__name__
