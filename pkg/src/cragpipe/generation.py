"""Prompt assembly (context first, question last), adapter routing and answer normalization."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .corpus import Sample, Task
from .errors import PipelineError, error_class
from .llm import BASE, TASK1_QA, TASK2_QA, TASK3_QA, ChatRequest, LLMClient
from .prompts import (
    ALWAYS_ANSWER_INSTRUCTION,
    DEFAULT_MISS_PHRASES,
    IDK,
    QA_CONTEXT_INTRO,
    QA_HEADER,
    QA_INSTRUCTION,
    QA_QUESTION,
    QA_SYSTEM,
)
from .rankers import ScoredCandidate
from .segmenter import Origin

log = logging.getLogger(__name__)

DEFAULT_PROMPT_CHAR_CAP = 12_000

_TRAILING = " \t\n.!?,;:"


def normalize(text: str) -> str:
    """Lowercase, collapse whitespace, drop trailing punctuation."""
    text = text.lower().replace("’", "'").replace("‘", "'")
    return " ".join(text.split()).rstrip(_TRAILING)


@dataclass(frozen=True)
class PromptBundle:
    context_blocks: tuple[str, ...]
    question: str
    query_time: str
    task: Task
    rendered: str


@dataclass(frozen=True)
class AnswerRecord:
    sample_id: str
    raw_text: str
    normalized: str
    is_miss: bool

    @classmethod
    def from_text(cls, sample_id: str, raw: str, miss_phrases: Iterable[str] = DEFAULT_MISS_PHRASES):
        norm = normalize(raw)
        misses = {normalize(p) for p in miss_phrases}
        return cls(sample_id, raw, norm, norm in misses)

    @classmethod
    def failure(cls, sample_id: str, cls_name: str) -> "AnswerRecord":
        """Fail closed: infrastructure problems become a missing answer."""
        return cls(sample_id, f"[error] {cls_name}", IDK, True)

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "raw_text": self.raw_text,
            "normalized": self.normalized,
            "is_miss": self.is_miss,
        }


def _render(blocks: Sequence[str], question: str, query_time: str, always_answer: bool) -> str:
    parts = [QA_HEADER.format(query_time=query_time or "unknown")]
    if blocks:
        parts.append("")
        parts.append(QA_CONTEXT_INTRO)
        parts.extend(f"[{i}] {text}" for i, text in enumerate(blocks, 1))
    parts.append("")
    parts.append(QA_QUESTION.format(question=question))
    parts.append(QA_INSTRUCTION)
    if always_answer:
        parts.append(ALWAYS_ANSWER_INSTRUCTION)
    return "\n".join(parts)


def assemble_prompt(
    candidates: Sequence[ScoredCandidate],
    sample: Sample,
    prompt_char_cap: int = DEFAULT_PROMPT_CHAR_CAP,
    always_answer: bool = False,
) -> PromptBundle:
    """Number the context best-first, then append the question and instruction.

    Task 1 prompts never carry knowledge-graph text. When the prompt exceeds
    ``prompt_char_cap`` the worst-ranked blocks are dropped first.
    """
    usable = [
        c
        for c in candidates
        if not (sample.task is Task.TASK1 and c.segment.origin is Origin.API_RESPONSE)
    ]
    blocks = [c.segment.text for c in sorted(usable, key=lambda c: c.rank)]
    question = sample.question
    rendered = _render(blocks, question, sample.query_time, always_answer)
    while len(rendered) > prompt_char_cap and blocks:
        blocks.pop()
        rendered = _render(blocks, question, sample.query_time, always_answer)
    if len(rendered) > prompt_char_cap:
        overflow = len(rendered) - prompt_char_cap
        question = question[: max(0, len(question) - overflow)]
        rendered = _render(blocks, question, sample.query_time, always_answer)
    return PromptBundle(tuple(blocks), question, sample.query_time, sample.task, rendered)


_ADAPTERS = {Task.TASK1: TASK1_QA, Task.TASK2: TASK2_QA, Task.TASK3: TASK3_QA}


def select_adapter(task: Task, use_base: bool = False) -> str:
    return BASE if use_base else _ADAPTERS[task]


def generate_answer(
    llm: LLMClient,
    bundle: PromptBundle,
    sample_id: str,
    adapter: Optional[str] = None,
    miss_phrases: Iterable[str] = DEFAULT_MISS_PHRASES,
    max_tokens: int = 128,
) -> AnswerRecord:
    adapter = adapter or select_adapter(bundle.task)
    request = ChatRequest(adapter=adapter, system=QA_SYSTEM, user=bundle.rendered, max_tokens=max_tokens)
    try:
        reply = llm.chat(request)
    except PipelineError as exc:
        log.warning("%s: generation failed closed (%s)", sample_id, exc)
        return AnswerRecord.failure(sample_id, error_class(exc))
    return AnswerRecord.from_text(sample_id, reply.text, miss_phrases)
