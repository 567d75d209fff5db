"""Run configuration: defaults, JSON config file, environment, then CLI flags."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .corpus import Task
from .evaluation import JudgeMode
from .prompts import DEFAULT_MISS_PHRASES
from .rankers import DEFAULT_CHAR_BUDGET, DEFAULT_RANKER, DEFAULT_TOP_K, RankerKind
from .segmenter import DEFAULT_MAX_CHARS

ENV_URLS = {
    "llm_url": "CRAGPIPE_LLM_URL",
    "embed_url": "CRAGPIPE_EMBED_URL",
    "cross_url": "CRAGPIPE_CROSS_URL",
    "kg_url": "CRAGPIPE_KG_URL",
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    task: Task = Task.TASK1
    input_path: str = ""
    output_dir: str = "runs/latest"
    ranker: RankerKind = DEFAULT_RANKER
    top_k: int = DEFAULT_TOP_K
    char_budget: int = DEFAULT_CHAR_BUDGET
    max_segment_chars: int = DEFAULT_MAX_CHARS
    prompt_char_cap: int = 12_000
    include_snippets: bool = False
    parallelism: int = 1
    doc_workers: int = 4
    doc_executor: str = "thread"  # thread | process | serial
    per_sample_deadline_ms: int = 30_000
    llm_url: str = "http://127.0.0.1:8000"
    embed_url: str = "http://127.0.0.1:8001"
    cross_url: str = "http://127.0.0.1:8002"
    kg_url: str = "http://127.0.0.1:8003"
    registry_path: Optional[str] = None
    model_ids: dict[str, str] = field(default_factory=dict)
    request_timeout_ms: int = 30_000
    max_attempts: int = 3
    max_inflight: int = 8
    judge_mode: JudgeMode = JudgeMode.EXACT_MATCH
    use_base_adapter: bool = False
    miss_phrases: tuple[str, ...] = DEFAULT_MISS_PHRASES
    seed: int = 0
    sample_budget: int = 500
    corrections_path: Optional[str] = None

    def __post_init__(self):
        self.task = Task.parse(self.task)
        self.ranker = RankerKind(self.ranker)
        self.judge_mode = JudgeMode(self.judge_mode)
        self.miss_phrases = tuple(self.miss_phrases)
        if self.per_sample_deadline_ms <= 0:
            raise ConfigError("per_sample_deadline_ms must be > 0")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")
        if self.doc_workers < 1:
            raise ConfigError("doc_workers must be >= 1")
        if self.max_segment_chars < 2:
            raise ConfigError("max_segment_chars must be >= 2")
        if self.top_k < 0:
            raise ConfigError("top_k must be >= 0")
        if self.doc_executor not in ("thread", "process", "serial"):
            raise ConfigError(f"unknown doc_executor {self.doc_executor!r}")

    def replace(self, **changes: Any) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["task"] = self.task.value
        out["ranker"] = self.ranker.value
        out["judge_mode"] = self.judge_mode.value
        out["miss_phrases"] = list(self.miss_phrases)
        return out


FIELD_NAMES = {f.name for f in dataclasses.fields(RunConfig)}


def load_config(path: Optional[str | Path] = None, overrides: Optional[dict] = None, environ=None) -> RunConfig:
    """Merge defaults < config file < environment URLs < explicit overrides."""
    values: dict[str, Any] = {}
    if path:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        unknown = set(data) - FIELD_NAMES
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        values.update(data)
    env = os.environ if environ is None else environ
    for key, var in ENV_URLS.items():
        if env.get(var):
            values[key] = env[var]
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return RunConfig(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
