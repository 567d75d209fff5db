"""Per-sample wall-clock budget shared by every remote call made for a sample."""

from __future__ import annotations

import contextlib
import contextvars
import time
from typing import Iterator, Optional

from .errors import DeadlineExceeded

_current: contextvars.ContextVar[Optional["Deadline"]] = contextvars.ContextVar(
    "cragpipe_deadline", default=None
)


class Deadline:
    def __init__(self, seconds: float):
        self.seconds = seconds
        self.expires_at = time.monotonic() + seconds

    def remaining(self) -> float:
        return self.expires_at - time.monotonic()

    def expired(self) -> bool:
        return self.remaining() <= 0

    def check(self, stage: str = "") -> None:
        if self.expired():
            raise DeadlineExceeded(f"sample budget of {self.seconds:.3f}s exhausted {stage}".strip())


@contextlib.contextmanager
def active(deadline: Optional[Deadline]) -> Iterator[Optional[Deadline]]:
    token = _current.set(deadline)
    try:
        yield deadline
    finally:
        _current.reset(token)


def current() -> Optional[Deadline]:
    return _current.get()


def effective_timeout(default_s: float) -> float:
    """Clamp a request timeout to whatever is left of the active sample budget."""
    deadline = _current.get()
    if deadline is None:
        return default_s
    remaining = deadline.remaining()
    if remaining <= 0:
        raise DeadlineExceeded(f"sample budget of {deadline.seconds:.3f}s exhausted")
    return min(default_s, remaining)
