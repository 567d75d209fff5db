"""Thin JSON-over-HTTP helper used by the embedding, cross-encoder and KG clients."""

from __future__ import annotations

import os
from typing import Any

import httpx

from . import budget
from .errors import DeadlineExceeded, MalformedResponse, ServiceUnavailable


def env_url(name: str, default: str) -> str:
    return os.environ.get(name, "").strip() or default


class JsonService:
    def __init__(self, base_url: str, timeout_ms: int = 10_000):
        self.base_url = base_url.rstrip("/")
        self.timeout_ms = timeout_ms
        self._http = httpx.Client(base_url=self.base_url, trust_env=False)

    def close(self) -> None:
        self._http.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def post_json(self, path: str, payload: Any) -> Any:
        timeout = budget.effective_timeout(self.timeout_ms / 1000)
        try:
            resp = self._http.post(path, json=payload, timeout=timeout)
        except httpx.TimeoutException as exc:
            raise DeadlineExceeded(f"{self.base_url}{path}: timed out") from exc
        except httpx.TransportError as exc:
            raise ServiceUnavailable(f"{self.base_url}{path}: {exc}") from exc
        if resp.status_code >= 500:
            raise ServiceUnavailable(f"{self.base_url}{path}: HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise MalformedResponse(f"{self.base_url}{path}: HTTP {resp.status_code}")
        try:
            return resp.json()
        except ValueError as exc:
            raise MalformedResponse(f"{self.base_url}{path}: body is not JSON") from exc
