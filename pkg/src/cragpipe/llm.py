"""OpenAI-compatible chat client with per-adapter model routing.

Every generative call in the pipeline (API-call generation, per-task answer
generation, the judge) goes through :class:`LLMClient`. The adapter name on a
request is mapped to a model identifier, which is how multi-adapter inference
servers expose separately loaded low-rank adapters.
"""

from __future__ import annotations

import logging
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Optional

import httpx

from . import budget
from .errors import DeadlineExceeded, MalformedResponse, ServiceUnavailable
from .prompts import JUDGE_SYSTEM, JUDGE_TEMPLATE

log = logging.getLogger(__name__)

API_CALL = "api-call"
TASK1_QA = "task1-qa"
TASK2_QA = "task2-qa"
TASK3_QA = "task3-qa"
BASE = "base"
JUDGE = "judge"

KNOWN_ADAPTERS = (API_CALL, TASK1_QA, TASK2_QA, TASK3_QA, BASE, JUDGE)


@dataclass(frozen=True)
class ChatRequest:
    adapter: str
    user: str
    system: Optional[str] = None
    max_tokens: int = 256
    temperature: float = 0.0
    seed: Optional[int] = 0

    def __post_init__(self):
        if not self.user:
            raise ValueError("user prompt must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass(frozen=True)
class ChatResponse:
    text: str
    latency_ms: int
    attempt_count: int


@dataclass
class LLMConfig:
    base_url: str = "http://127.0.0.1:8000"
    model_ids: dict[str, str] = field(default_factory=dict)
    timeout_ms: int = 30_000
    max_attempts: int = 3
    max_inflight: int = 8
    backoff_ms: int = 200

    def model_for(self, adapter: str) -> str:
        model = self.model_ids.get(adapter, adapter)
        if not model:
            raise ValueError(f"adapter {adapter!r} maps to an empty model id")
        return model


class LLMClient:
    def __init__(self, config: LLMConfig):
        self.config = config
        self._http = httpx.Client(base_url=config.base_url.rstrip("/"), trust_env=False)
        self._slots = threading.BoundedSemaphore(max(1, config.max_inflight))

    def close(self) -> None:
        self._http.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _body(self, request: ChatRequest) -> dict:
        messages = []
        if request.system:
            messages.append({"role": "system", "content": request.system})
        messages.append({"role": "user", "content": request.user})
        body = {
            "model": self.config.model_for(request.adapter),
            "messages": messages,
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
        }
        if request.seed is not None:
            body["seed"] = request.seed
        return body

    def chat(self, request: ChatRequest) -> ChatResponse:
        body = self._body(request)
        attempts = max(1, self.config.max_attempts)
        started = time.monotonic()
        last_error = ""
        with self._slots:
            for attempt in range(1, attempts + 1):
                timeout = budget.effective_timeout(self.config.timeout_ms / 1000)
                try:
                    resp = self._http.post("/v1/chat/completions", json=body, timeout=timeout)
                except httpx.TimeoutException as exc:
                    raise DeadlineExceeded(f"chat request exceeded {timeout:.3f}s") from exc
                except httpx.TransportError as exc:
                    last_error = f"{type(exc).__name__}: {exc}"
                else:
                    if resp.status_code < 500:
                        text = _extract_text(resp)
                        latency = int((time.monotonic() - started) * 1000)
                        return ChatResponse(text=text, latency_ms=latency, attempt_count=attempt)
                    last_error = f"HTTP {resp.status_code}"
                log.debug("chat attempt %d/%d failed: %s", attempt, attempts, last_error)
                if attempt < attempts:
                    time.sleep(self.config.backoff_ms / 1000 * 2 ** (attempt - 1))
        raise ServiceUnavailable(
            f"chat endpoint failed after {attempts} attempts: {last_error}", attempt_count=attempts
        )

    def judge_correct(self, question: str, ground_truth: str, candidate: str) -> bool:
        """Ask the judge adapter whether ``candidate`` answers ``question`` like ``ground_truth``."""
        if not ground_truth:
            raise ValueError("ground truth must be non-empty")
        prompt = JUDGE_TEMPLATE.format(
            question=question, ground_truth=ground_truth, candidate=candidate
        )
        reply = self.chat(ChatRequest(adapter=JUDGE, system=JUDGE_SYSTEM, user=prompt, max_tokens=4))
        return parse_judgement(reply.text)


_VERDICT_RE = re.compile(r"^\W*(yes|no)\b", re.IGNORECASE)


def parse_judgement(text: str) -> bool:
    """Leading yes/no, case-insensitive. Anything else counts as not correct."""
    m = _VERDICT_RE.match(text)
    return bool(m) and m.group(1).lower() == "yes"


def _extract_text(resp: httpx.Response) -> str:
    if resp.status_code >= 400:
        raise MalformedResponse(f"chat endpoint answered HTTP {resp.status_code}")
    try:
        content = resp.json()["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise MalformedResponse("chat response lacks choices[0].message.content") from exc
    if content is None:
        return ""
    if not isinstance(content, str):
        raise MalformedResponse("chat message content is not a string")
    return content.strip()
