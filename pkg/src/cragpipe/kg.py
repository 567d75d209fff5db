"""Knowledge-graph function registry, call generation, parsing and execution.

Each REST endpoint of the knowledge-graph service is described declaratively
as an :class:`ApiFunction` with a docstring the model reads when choosing a
call. The model emits one positional call such as ``get_price("AAPL")``,
which is parsed, validated against the registry, executed over HTTP and its
JSON reply flattened into ranking segments.
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional, Sequence, Union
from urllib.parse import quote

import httpx

from . import budget
from .errors import DeadlineExceeded, PipelineError
from .llm import API_CALL, ChatRequest, LLMClient
from .prompts import CALL_HEADER, CALL_INSTRUCTION, CALL_QUESTION
from .segmenter import DEFAULT_MAX_CHARS, Origin, Segment, split_oversize_text

API_DOC_INDEX = -1


class ParamKind(str, enum.Enum):
    STRING = "string"
    NUMBER = "number"
    DATE = "date-string"


@dataclass(frozen=True)
class Param:
    name: str
    kind: ParamKind = ParamKind.STRING
    required: bool = True


@dataclass(frozen=True)
class ApiFunction:
    name: str
    doc: str
    params: tuple[Param, ...]
    endpoint_path: str
    formatter_id: str = "generic"
    method: str = "POST"

    @property
    def n_required(self) -> int:
        return sum(p.required for p in self.params)


Literal = Union[str, int, float]


@dataclass(frozen=True)
class ApiCall:
    function: ApiFunction
    args: tuple[Literal, ...]
    raw: str = field(default="", compare=False)


class _NoCall:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "NoCall"


NO_CALL = _NoCall()


class CallParseError(PipelineError):
    pass


class UnknownFunction(CallParseError):
    pass


class ArityMismatch(CallParseError):
    pass


class BadLiteral(CallParseError):
    pass


class BadBody(PipelineError):
    pass


class RegistryError(PipelineError):
    pass


# ------------------------------------------------------------------ registry


class Registry(tuple):
    """Ordered, immutable collection of ApiFunction with lookup by name."""

    def __new__(cls, functions: Sequence[ApiFunction]):
        self = super().__new__(cls, functions)
        names = [f.name for f in self]
        if len(set(names)) != len(names):
            raise RegistryError("function names must be unique")
        for f in self:
            seen_optional = False
            for p in f.params:
                if p.required and seen_optional:
                    raise RegistryError(f"{f.name}: required param {p.name} follows an optional one")
                seen_optional |= not p.required
        return self

    def get(self, name: str) -> Optional[ApiFunction]:
        for f in self:
            if f.name == name:
                return f
        return None


def function_from_dict(d: dict) -> ApiFunction:
    return ApiFunction(
        name=d["name"],
        doc=d.get("doc", ""),
        params=tuple(
            Param(p["name"], ParamKind(p.get("kind", "string")), bool(p.get("required", True)))
            for p in d.get("params", [])
        ),
        endpoint_path=d["endpoint_path"],
        formatter_id=d.get("formatter", "generic"),
        method=d.get("method", "POST").upper(),
    )


def load_registry(path: str | Path | None = None) -> Registry:
    """Load a registry file; with no path, the bundled CRAG-style registry."""
    if path is None:
        text = resources.files("cragpipe.data").joinpath("kg_registry.json").read_text("utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    try:
        entries = json.loads(text)
        return Registry([function_from_dict(d) for d in entries])
    except (ValueError, KeyError, TypeError) as exc:
        raise RegistryError(f"invalid registry: {exc}") from exc


# ------------------------------------------------------------------ rendering


def render_signature(fn: ApiFunction) -> str:
    parts = [p.name if p.required else f"{p.name}=None" for p in fn.params]
    return f"{fn.name}({', '.join(parts)})"


def render_entry(fn: ApiFunction) -> str:
    lines = [render_signature(fn)]
    lines.extend(f"    {line}" for line in fn.doc.strip().splitlines())
    if fn.params:
        args = ", ".join(
            f"{p.name}: {p.kind.value}{'' if p.required else ' (optional)'}" for p in fn.params
        )
        lines.append(f"    Arguments: {args}")
    return "\n".join(lines) + "\n\n"


def render_catalog(registry: Sequence[ApiFunction]) -> str:
    if not registry:
        raise RegistryError("registry is empty")
    return "".join(render_entry(f) for f in registry)


def render_literal(value: Literal) -> str:
    if isinstance(value, bool):
        raise BadLiteral("booleans are not call literals")
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    return json.dumps(value, ensure_ascii=False)


def render_call(call: ApiCall) -> str:
    return f"{call.function.name}({', '.join(render_literal(a) for a in call.args)})"


def build_call_prompt(question: str, query_time: str, registry: Sequence[ApiFunction]) -> str:
    return "\n\n".join(
        [
            CALL_HEADER,
            render_catalog(registry).rstrip("\n"),
            CALL_QUESTION.format(question=question, query_time=query_time or "unknown"),
            CALL_INSTRUCTION,
        ]
    )


def generate_call(
    llm: LLMClient,
    question: str,
    query_time: str,
    registry: Sequence[ApiFunction],
    adapter: str = API_CALL,
) -> str:
    prompt = build_call_prompt(question, query_time, registry)
    return llm.chat(ChatRequest(adapter=adapter, user=prompt, max_tokens=128)).text


# -------------------------------------------------------------------- parsing

_NUMBER_RE = re.compile(r"-?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?")
_ANY_CALL_RE = re.compile(r"\b([A-Za-z_]\w*)\s*\(")
_DATE_RE = re.compile(r"^\d{4}-\d{2}-\d{2}([ T]\d{2}:\d{2}(:\d{2})?)?$")
_NONE_RE = re.compile(r"^[\s`'\"*]*none[\s`'\".!*]*$", re.IGNORECASE)
_DECODER = json.JSONDecoder()


def _number(text: str) -> int | float:
    if re.fullmatch(r"-?\d+", text):
        return int(text)
    return float(text)


def _single_quoted(raw: str, start: int) -> tuple[str, int]:
    out = []
    i = start + 1
    while i < len(raw):
        ch = raw[i]
        if ch == "\\" and i + 1 < len(raw):
            out.append(raw[i + 1])
            i += 2
            continue
        if ch == "'":
            return "".join(out), i + 1
        out.append(ch)
        i += 1
    raise BadLiteral("unterminated single-quoted string")


def _parse_args(raw: str, pos: int) -> list[Literal]:
    args: list[Literal] = []
    n = len(raw)

    def skip(i: int) -> int:
        while i < n and raw[i].isspace():
            i += 1
        return i

    pos = skip(pos)
    if pos < n and raw[pos] == ")":
        return args
    while True:
        pos = skip(pos)
        if pos >= n:
            raise BadLiteral("unterminated argument list")
        ch = raw[pos]
        if ch == '"':
            try:
                value, pos = _DECODER.raw_decode(raw, pos)
            except ValueError as exc:
                raise BadLiteral(f"bad double-quoted string at {pos}") from exc
        elif ch == "'":
            value, pos = _single_quoted(raw, pos)
        else:
            m = _NUMBER_RE.match(raw, pos)
            if not m:
                token = re.match(r"[^,)\s]*", raw[pos:]).group(0)
                raise BadLiteral(f"unsupported literal {token!r}")
            value, pos = _number(m.group(0)), m.end()
        args.append(value)
        pos = skip(pos)
        if pos >= n:
            raise BadLiteral("unterminated argument list")
        if raw[pos] == ")":
            return args
        if raw[pos] != ",":
            raise BadLiteral(f"expected ',' or ')' at {pos}")
        pos += 1


def _coerce(fn: ApiFunction, param: Param, value: Literal) -> Literal:
    if param.kind is ParamKind.NUMBER:
        if isinstance(value, str):
            if not _NUMBER_RE.fullmatch(value.strip()):
                raise BadLiteral(f"{fn.name}: {param.name} expects a number, got {value!r}")
            return _number(value.strip())
        return value
    if not isinstance(value, str):
        raise BadLiteral(f"{fn.name}: {param.name} expects a quoted string, got {value!r}")
    if param.kind is ParamKind.DATE and not _DATE_RE.match(value):
        raise BadLiteral(f"{fn.name}: {param.name} expects YYYY-MM-DD, got {value!r}")
    return value


def parse_call(raw: str, registry: Sequence[ApiFunction]) -> ApiCall | _NoCall:
    """Find and validate the first registry call in ``raw``.

    Returns NO_CALL for a standalone "None". Raises UnknownFunction,
    ArityMismatch or BadLiteral otherwise.
    """
    by_name = {f.name: f for f in registry}
    if by_name:
        names = "|".join(re.escape(n) for n in sorted(by_name, key=len, reverse=True))
        m = re.search(rf"(?<![\w.])({names})\s*\(", raw)
    else:
        m = None
    if m is None:
        if _NONE_RE.match(raw) or any(_NONE_RE.match(line) for line in raw.splitlines()):
            return NO_CALL
        other = _ANY_CALL_RE.search(raw)
        if other:
            raise UnknownFunction(f"unknown function {other.group(1)!r}")
        raise UnknownFunction("no function call found")
    fn = by_name[m.group(1)]
    args = _parse_args(raw, m.end())
    if not fn.n_required <= len(args) <= len(fn.params):
        raise ArityMismatch(
            f"{fn.name} takes {fn.n_required}..{len(fn.params)} arguments, got {len(args)}"
        )
    coerced = tuple(_coerce(fn, p, a) for p, a in zip(fn.params, args))
    return ApiCall(fn, coerced, raw=raw)


# ------------------------------------------------------------------ execution


class CallStatus(str, enum.Enum):
    NO_CALL = "NoCall"
    EXECUTED = "Executed"
    FAILED = "Failed"


class FailureClass(str, enum.Enum):
    HTTP_4XX = "Http4xx"
    HTTP_5XX = "Http5xx"
    TIMEOUT = "Timeout"
    BAD_BODY = "BadBody"
    UNREACHABLE = "Unreachable"
    UNKNOWN_FUNCTION = "UnknownFunction"
    ARITY_MISMATCH = "ArityMismatch"
    BAD_LITERAL = "BadLiteral"


@dataclass(frozen=True)
class CallOutcome:
    status: CallStatus
    call: Optional[ApiCall] = None
    body: Any = None
    segments: tuple[Segment, ...] = ()
    failure: Optional[FailureClass] = None
    detail: str = ""

    @classmethod
    def no_call(cls) -> "CallOutcome":
        return cls(CallStatus.NO_CALL)

    @classmethod
    def failed(cls, failure: FailureClass, detail: str = "", call: Optional[ApiCall] = None):
        return cls(CallStatus.FAILED, call=call, failure=failure, detail=detail)

    @property
    def executed(self) -> bool:
        return self.status is CallStatus.EXECUTED


def bind_request(call: ApiCall) -> tuple[str, dict]:
    """Substitute ``{param}`` placeholders in the path; the rest become named args."""
    path = call.function.endpoint_path
    named = {}
    for param, value in zip(call.function.params, call.args):
        placeholder = "{" + param.name + "}"
        if placeholder in path:
            path = path.replace(placeholder, quote(str(value), safe=""))
        else:
            named[param.name] = value
    return path, named


def execute_call(
    call: ApiCall,
    base_url: str,
    timeout_ms: int = 10_000,
    max_chars: int = DEFAULT_MAX_CHARS,
    http: Optional[httpx.Client] = None,
) -> CallOutcome:
    """Run one call against the KG service. Never raises; failures live in the outcome."""
    path, named = bind_request(call)
    url = base_url.rstrip("/") + path
    own = http is None
    client = http or httpx.Client(trust_env=False)
    try:
        timeout = budget.effective_timeout(timeout_ms / 1000)
        if call.function.method == "GET":
            resp = client.get(url, params={k: str(v) for k, v in named.items()}, timeout=timeout)
        else:
            resp = client.post(url, json=named, timeout=timeout)
    except (httpx.TimeoutException, DeadlineExceeded) as exc:
        return CallOutcome.failed(FailureClass.TIMEOUT, str(exc), call)
    except httpx.TransportError as exc:
        return CallOutcome.failed(FailureClass.UNREACHABLE, str(exc), call)
    finally:
        if own:
            client.close()
    if 400 <= resp.status_code < 500:
        return CallOutcome.failed(FailureClass.HTTP_4XX, f"HTTP {resp.status_code}", call)
    if resp.status_code >= 500 or resp.status_code < 200 or resp.status_code >= 300:
        return CallOutcome.failed(FailureClass.HTTP_5XX, f"HTTP {resp.status_code}", call)
    try:
        body = resp.json()
        segments = format_response(body, call.function.formatter_id, max_chars)
    except (ValueError, BadBody) as exc:
        return CallOutcome.failed(FailureClass.BAD_BODY, str(exc), call)
    return CallOutcome(CallStatus.EXECUTED, call=call, body=body, segments=tuple(segments))


# ------------------------------------------------------------------ formatting


def _scalar(value: Any) -> str:
    if isinstance(value, str):
        return value
    return json.dumps(value, ensure_ascii=False)


def flatten(value: Any, prefix: str = "") -> list[str]:
    """``key.sub[0]: value`` lines for every leaf of a JSON document."""
    if isinstance(value, dict):
        out = []
        for k, v in value.items():
            out.extend(flatten(v, f"{prefix}.{k}" if prefix else str(k)))
        return out
    if isinstance(value, list):
        out = []
        for i, v in enumerate(value):
            out.extend(flatten(v, f"{prefix}[{i}]"))
        return out
    return [f"{prefix or 'value'}: {_scalar(value)}"]


def _generic_chunks(body: Any) -> list[str]:
    if isinstance(body, dict):
        groups = [flatten(v, str(k)) for k, v in body.items()]
    elif isinstance(body, list):
        groups = [flatten(v, f"[{i}]") for i, v in enumerate(body)]
    else:
        groups = [flatten(body)]
    return ["\n".join(lines) for lines in groups if lines]


def _records_chunks(body: Any) -> list[str]:
    if not isinstance(body, list) or not all(isinstance(r, dict) for r in body):
        raise BadBody("records formatter expects a list of objects")
    return ["\n".join(flatten(r)) for r in body if r]


def _result_chunks(body: Any) -> list[str]:
    if not isinstance(body, dict) or "result" not in body:
        raise BadBody("result formatter expects an object with a 'result' key")
    result = body["result"]
    if result is None:
        return []
    return _generic_chunks(result if isinstance(result, (dict, list)) else {"result": result})


FORMATTERS = {
    "generic": _generic_chunks,
    "records": _records_chunks,
    "result": _result_chunks,
}


def format_response(body: Any, formatter_id: str = "generic", max_chars: int = DEFAULT_MAX_CHARS) -> list[Segment]:
    try:
        chunker = FORMATTERS[formatter_id]
    except KeyError:
        raise BadBody(f"unknown formatter {formatter_id!r}") from None
    segments = []
    for i, chunk in enumerate(chunker(body)):
        if not chunk.strip():
            continue
        if len(chunk) < max_chars:
            segments.append(Segment(API_DOC_INDEX, chunk, Origin.API_RESPONSE, (i,)))
            continue
        for j, piece in enumerate(split_oversize_text(chunk, max_chars)):
            segments.append(Segment(API_DOC_INDEX, piece, Origin.API_RESPONSE, (i, j)))
    return segments


def outcome_for(
    raw: str,
    registry: Sequence[ApiFunction],
    base_url: str,
    timeout_ms: int = 10_000,
    max_chars: int = DEFAULT_MAX_CHARS,
    http: Optional[httpx.Client] = None,
) -> CallOutcome:
    """Parse then execute a generated call string, folding parse errors into Failed."""
    try:
        parsed = parse_call(raw, registry)
    except CallParseError as exc:
        return CallOutcome.failed(FailureClass(type(exc).__name__), str(exc))
    if parsed is NO_CALL:
        return CallOutcome.no_call()
    return execute_call(parsed, base_url, timeout_ms, max_chars, http)
