"""Deterministic HTTP stand-ins for the LLM, embedding, cross-encoder and KG services.

The stubs speak the same wire formats as the production endpoints, so the
real clients are exercised unmodified. Responses depend only on the request
body, the configured rules and the seed.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import re
import struct
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Callable, Optional, Sequence, Union
from urllib.parse import parse_qsl, unquote, urlsplit

log = logging.getLogger(__name__)

Responder = Union[str, Sequence[str], Callable[[re.Match, dict], str]]


@dataclass
class StubRule:
    """First-match-wins response rule.

    ``matcher`` is a regular expression searched (DOTALL) in the request text.
    ``response`` may be a template using ``\\1``/``\\g<name>`` group
    references, a list of templates (one is picked from the seed and request
    hash), or a callable ``(match, request) -> str``. ``model`` restricts a
    rule to one model id; ``status`` lets a rule answer with an HTTP error.
    """

    matcher: str
    response: Responder = ""
    delay_ms: int = 0
    model: Optional[str] = None
    status: int = 200

    def __post_init__(self):
        if self.delay_ms < 0:
            raise ValueError("delay_ms must be >= 0")
        self._regex = re.compile(self.matcher, re.DOTALL)

    def match(self, text: str, model: Optional[str] = None) -> Optional[re.Match]:
        if self.model is not None and self.model != model:
            return None
        return self._regex.search(text)

    def render(self, m: re.Match, request: dict, seed: int) -> str:
        resp = self.response
        if callable(resp):
            return resp(m, request)
        if not isinstance(resp, str):
            choices = list(resp)
            resp = choices[_stable_int(seed, json.dumps(request, sort_keys=True)) % len(choices)]
        return m.expand(resp)

    @classmethod
    def from_dict(cls, d: dict) -> "StubRule":
        return cls(
            matcher=d["matcher"],
            response=d.get("response", ""),
            delay_ms=int(d.get("delay_ms", 0)),
            model=d.get("model"),
            status=int(d.get("status", 200)),
        )


def _stable_int(seed: int, text: str) -> int:
    return int.from_bytes(hashlib.sha256(f"{seed}\x00{text}".encode()).digest()[:8], "big")


class StubServer:
    """Threaded HTTP server on 127.0.0.1 that records every request it sees."""

    def __init__(self, port: int = 0):
        self.port = port
        self.requests: list[dict] = []
        self._lock = threading.Lock()
        self._server: Optional[ThreadingHTTPServer] = None
        self._thread: Optional[threading.Thread] = None

    # subclasses implement: handle(method, path, query, body) -> (status, payload, delay_s)
    def handle(self, method: str, path: str, query: dict, body: Any) -> tuple[int, Any, float]:
        raise NotImplementedError

    @property
    def url(self) -> str:
        if self._server is None:
            raise RuntimeError("stub is not running")
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def request_count(self, path_prefix: str = "") -> int:
        with self._lock:
            return sum(1 for r in self.requests if r["path"].startswith(path_prefix))

    def clear(self) -> None:
        with self._lock:
            self.requests.clear()

    def start(self) -> "StubServer":
        if self._server is not None:
            return self
        stub = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def _dispatch(self, method: str) -> None:
                parts = urlsplit(self.path)
                length = int(self.headers.get("Content-Length") or 0)
                raw = self.rfile.read(length) if length else b""
                try:
                    body = json.loads(raw) if raw else None
                except ValueError:
                    self._send(400, {"error": "body is not JSON"})
                    return
                path = unquote(parts.path)
                query = dict(parse_qsl(parts.query, keep_blank_values=True))
                with stub._lock:
                    stub.requests.append({"method": method, "path": path, "query": query, "body": body})
                try:
                    status, payload, delay = stub.handle(method, path, query, body)
                except Exception as exc:  # keep the stub alive on handler bugs
                    log.exception("stub handler failed")
                    status, payload, delay = 500, {"error": str(exc)}, 0.0
                if delay > 0:
                    time.sleep(delay)
                self._send(status, payload)

            def _send(self, status: int, payload: Any) -> None:
                data = json.dumps(payload, sort_keys=True).encode("utf-8")
                try:
                    self.send_response(status)
                    self.send_header("Content-Type", "application/json")
                    self.send_header("Content-Length", str(len(data)))
                    self.end_headers()
                    self.wfile.write(data)
                except (BrokenPipeError, ConnectionResetError):
                    pass  # client gave up (timeout tests)

            def do_GET(self):
                self._dispatch("GET")

            def do_POST(self):
                self._dispatch("POST")

            def log_message(self, format, *args):
                return

        self._server = ThreadingHTTPServer(("127.0.0.1", self.port), Handler)
        self._server.daemon_threads = True
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        if self._server is None:
            return
        self._server.shutdown()
        self._server.server_close()
        self._thread.join(timeout=2)
        self._server = None
        self._thread = None

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


# --------------------------------------------------------------------- LLM


def _last_user_line(messages: list) -> str:
    for msg in reversed(messages or []):
        if isinstance(msg, dict) and msg.get("role") == "user":
            lines = [ln for ln in str(msg.get("content", "")).splitlines() if ln.strip()]
            return lines[-1].strip() if lines else ""
    return ""


def _user_text(messages: list) -> str:
    for msg in reversed(messages or []):
        if isinstance(msg, dict) and msg.get("role") == "user":
            return str(msg.get("content", ""))
    return ""


class StubLLM(StubServer):
    """OpenAI-compatible chat endpoint driven by StubRule matching on the user message."""

    def __init__(self, rules: Sequence[StubRule] = (), seed: int = 0, port: int = 0):
        super().__init__(port)
        self.rules = list(rules)
        self.seed = seed

    def prompts(self, model: Optional[str] = None) -> list[str]:
        with self._lock:
            reqs = list(self.requests)
        return [
            _user_text(r["body"]["messages"])
            for r in reqs
            if r["path"].endswith("/chat/completions")
            and isinstance(r["body"], dict)
            and (model is None or r["body"].get("model") == model)
        ]

    def handle(self, method, path, query, body):
        if method != "POST" or not path.endswith("/v1/chat/completions"):
            return 404, {"error": "not found"}, 0.0
        if not isinstance(body, dict) or not isinstance(body.get("messages"), list):
            return 400, {"error": "messages missing"}, 0.0
        model = body.get("model")
        text = _user_text(body["messages"])
        request = {"model": model, "messages": body["messages"], "seed": body.get("seed")}
        for rule in self.rules:
            m = rule.match(text, model)
            if m is None:
                continue
            if rule.status != 200:
                return rule.status, {"error": "stub rule error"}, rule.delay_ms / 1000
            content = rule.render(m, request, self.seed)
            return 200, _completion(model, content), rule.delay_ms / 1000
        return 200, _completion(model, _last_user_line(body["messages"])), 0.0


def _completion(model: Any, content: str) -> dict:
    return {
        "id": "stub-" + hashlib.sha256(content.encode()).hexdigest()[:12],
        "object": "chat.completion",
        "model": model,
        "choices": [
            {"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": "stop"}
        ],
    }


# --------------------------------------------------------------- embeddings


def hash_vector(text: str, dim: int, seed: int = 0) -> list[float]:
    """Unit vector derived from a seeded hash of ``text``."""
    values: list[float] = []
    block = 0
    while len(values) < dim:
        digest = hashlib.sha256(f"{seed}\x00{block}\x00{text}".encode("utf-8")).digest()
        for (word,) in struct.iter_unpack(">I", digest):
            values.append(word / 2**31 - 1.0)
        block += 1
    values = values[:dim]
    norm = math.sqrt(sum(v * v for v in values)) or 1.0
    return [v / norm for v in values]


class StubEmbed(StubServer):
    def __init__(self, dim: int = 64, seed: int = 0, overrides: Optional[dict] = None, port: int = 0):
        super().__init__(port)
        self.dim = dim
        self.seed = seed
        self.overrides = dict(overrides or {})

    def handle(self, method, path, query, body):
        if method != "POST" or path != "/embed":
            return 404, {"error": "not found"}, 0.0
        texts = body.get("texts") if isinstance(body, dict) else None
        if not isinstance(texts, list):
            return 400, {"error": "texts missing"}, 0.0
        vectors = [self.overrides.get(t) or hash_vector(str(t), self.dim, self.seed) for t in texts]
        return 200, {"vectors": vectors}, 0.0


# ------------------------------------------------------------ cross-encoder

_WORD_RE = re.compile(r"\w+")


def token_overlap(query: str, passage: str) -> float:
    q = set(_WORD_RE.findall(query.lower()))
    if not q:
        return 0.0
    return len(q & set(_WORD_RE.findall(passage.lower()))) / len(q)


class StubCross(StubServer):
    """``TokenOverlap`` scores shared-token fraction; ``Canned`` applies rules to each passage."""

    TOKEN_OVERLAP = "TokenOverlap"
    CANNED = "Canned"

    def __init__(self, mode: str = TOKEN_OVERLAP, rules: Sequence[StubRule] = (), default: float = 0.0, port: int = 0):
        super().__init__(port)
        if mode not in (self.TOKEN_OVERLAP, self.CANNED):
            raise ValueError(f"unknown cross stub mode {mode!r}")
        self.mode = mode
        self.rules = list(rules)
        self.default = default

    def _score(self, query: str, passage: str) -> tuple[float, float]:
        if self.mode == self.TOKEN_OVERLAP:
            return token_overlap(query, passage), 0.0
        for rule in self.rules:
            m = rule.match(passage)
            if m is not None:
                return float(rule.render(m, {"query": query, "passage": passage}, 0)), rule.delay_ms / 1000
        return self.default, 0.0

    def handle(self, method, path, query, body):
        if method != "POST" or path != "/score":
            return 404, {"error": "not found"}, 0.0
        if not isinstance(body, dict) or not isinstance(body.get("passages"), list):
            return 400, {"error": "passages missing"}, 0.0
        q = str(body.get("query", ""))
        scored = [self._score(q, str(p)) for p in body["passages"]]
        delay = max((d for _, d in scored), default=0.0)
        return 200, {"scores": [s for s, _ in scored]}, delay


# ----------------------------------------------------------------------- KG


def fixture_key(path: str, args: Sequence[Any]) -> tuple[str, str]:
    return path, json.dumps(list(args), sort_keys=True)


class StubKG(StubServer):
    """Serves canned JSON bodies keyed by (path, positional args); 404 otherwise."""

    def __init__(
        self,
        fixtures: Optional[dict] = None,
        delay_rules: Sequence[StubRule] = (),
        status_overrides: Optional[dict[str, int]] = None,
        port: int = 0,
    ):
        super().__init__(port)
        self.fixtures: dict[tuple[str, str], Any] = {}
        for (path, args), body in (fixtures or {}).items():
            self.add(path, args, body)
        self.delay_rules = list(delay_rules)
        self.status_overrides = dict(status_overrides or {})

    def add(self, path: str, args: Sequence[Any], body: Any) -> None:
        self.fixtures[fixture_key(path, args)] = body

    def handle(self, method, path, query, body):
        args = list(body.values()) if isinstance(body, dict) else list(query.values())
        delay = 0.0
        for rule in self.delay_rules:
            if rule.match(f"{path} {json.dumps(args)}"):
                delay = rule.delay_ms / 1000
                break
        if path in self.status_overrides:
            return self.status_overrides[path], {"error": "stub override"}, delay
        key = fixture_key(path, args)
        if key in self.fixtures:
            return 200, self.fixtures[key], delay
        return 404, {"error": "no fixture"}, delay


# -------------------------------------------------------------------- suite


class StubSuite:
    """All four stubs started together; ``endpoints`` feeds straight into a RunConfig."""

    def __init__(self, llm: StubLLM, embed: StubEmbed, cross: StubCross, kg: StubKG):
        self.llm, self.embed, self.cross, self.kg = llm, embed, cross, kg

    @property
    def servers(self) -> tuple[StubServer, ...]:
        return (self.llm, self.embed, self.cross, self.kg)

    @property
    def endpoints(self) -> dict[str, str]:
        return {
            "llm_url": self.llm.url,
            "embed_url": self.embed.url,
            "cross_url": self.cross.url,
            "kg_url": self.kg.url,
        }

    def start(self) -> "StubSuite":
        for s in self.servers:
            s.start()
        return self

    def stop(self) -> None:
        for s in self.servers:
            s.stop()

    def clear(self) -> None:
        for s in self.servers:
            s.clear()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()
