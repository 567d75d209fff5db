"""Line-delimited sample files: loading, validation and serialization.

Each line of an input file is one JSON object describing a question, its task
mode and the web search results retrieved for it. Loading is lenient: lines
that fail to parse are counted and skipped, and samples that break a task rule
are reported and skipped, so one bad record never sinks a whole run.
"""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator, Optional

from .errors import PipelineError

log = logging.getLogger(__name__)

FALSE_PREMISE_LABEL = "false_premise"


class Task(str, enum.Enum):
    TASK1 = "Task1"
    TASK2 = "Task2"
    TASK3 = "Task3"

    @property
    def max_documents(self) -> int:
        return 50 if self is Task.TASK3 else 5

    @property
    def uses_kg(self) -> bool:
        return self is not Task.TASK1

    @classmethod
    def parse(cls, value: Any) -> "Task":
        if isinstance(value, Task):
            return value
        text = str(value).strip().lower().replace("_", "").replace(" ", "")
        if text.startswith("task"):
            text = text[4:]
        try:
            return {"1": cls.TASK1, "2": cls.TASK2, "3": cls.TASK3}[text]
        except KeyError:
            raise ValueError(f"unknown task {value!r}") from None


class FileUnreadable(PipelineError):
    pass


class EmptyDataset(PipelineError):
    pass


class TaskViolation(PipelineError):
    pass


@dataclass(frozen=True)
class SearchResult:
    page_name: str
    page_url: str
    page_snippet: str = ""
    page_html: str = ""


@dataclass(frozen=True)
class Sample:
    id: str
    question: str
    task: Task
    search_results: tuple[SearchResult, ...]
    query_time: str = ""
    answer: Optional[str] = None
    domain_tag: Optional[str] = None
    question_type_tag: Optional[str] = None
    dynamism_tag: Optional[str] = None
    popularity_tag: Optional[str] = None

    @property
    def false_premise(self) -> bool:
        return self.question_type_tag == FALSE_PREMISE_LABEL

    @property
    def facets(self) -> dict[str, Optional[str]]:
        return {
            "domain": self.domain_tag,
            "question_type": self.question_type_tag,
            "dynamism": self.dynamism_tag,
            "popularity": self.popularity_tag,
        }


@dataclass(frozen=True)
class Violation:
    sample_id: str
    field: str
    rule: str

    def __str__(self) -> str:
        return f"{self.sample_id}: {self.field}: {self.rule}"


@dataclass
class Dataset:
    samples: list[Sample]
    source_path: str
    skipped_count: int = 0
    violations: list[Violation] = field(default_factory=list)

    def __iter__(self) -> Iterator[Sample]:
        return iter(self.samples)

    def __len__(self) -> int:
        return len(self.samples)

    def by_id(self) -> dict[str, Sample]:
        return {s.id: s for s in self.samples}


# record key -> Sample attribute
_TAG_KEYS = {
    "domain": "domain_tag",
    "question_type": "question_type_tag",
    "static_or_dynamic": "dynamism_tag",
    "popularity": "popularity_tag",
}


def _opt_str(value: Any) -> Optional[str]:
    if value is None:
        return None
    return str(value)


def sample_from_record(record: dict) -> Sample:
    """Build a Sample from one decoded line. Raises ValueError/KeyError/TypeError on bad shape."""
    if not isinstance(record, dict):
        raise TypeError("record is not an object")
    results = record["search_results"]
    if not isinstance(results, list):
        raise TypeError("search_results is not a list")
    parsed = []
    for r in results:
        if not isinstance(r, dict):
            raise TypeError("search result is not an object")
        parsed.append(
            SearchResult(
                page_name=str(r.get("page_name") or ""),
                page_url=str(r.get("page_url") or ""),
                page_snippet=str(r.get("page_snippet") or ""),
                page_html=str(r.get("page_html") or ""),
            )
        )
    sample_id = record["id"]
    question = record["question"]
    if not isinstance(sample_id, (str, int)) or not isinstance(question, str):
        raise TypeError("id/question have the wrong type")
    tags = {attr: _opt_str(record.get(key)) for key, attr in _TAG_KEYS.items()}
    return Sample(
        id=str(sample_id),
        question=question,
        task=Task.parse(record["task"]),
        search_results=tuple(parsed),
        query_time=str(record.get("query_time") or ""),
        answer=_opt_str(record.get("answer")),
        **tags,
    )


def sample_to_record(sample: Sample) -> dict:
    record: dict[str, Any] = {
        "id": sample.id,
        "question": sample.question,
        "task": sample.task.value,
        "query_time": sample.query_time,
        "search_results": [
            {
                "page_name": r.page_name,
                "page_url": r.page_url,
                "page_snippet": r.page_snippet,
                "page_html": r.page_html,
            }
            for r in sample.search_results
        ],
    }
    if sample.answer is not None:
        record["answer"] = sample.answer
    for key, attr in _TAG_KEYS.items():
        value = getattr(sample, attr)
        if value is not None:
            record[key] = value
    return record


def validate_sample(sample: Sample) -> list[Violation]:
    """Return every rule the sample breaks; an empty list means it is usable."""
    out = []
    limit = sample.task.max_documents
    if len(sample.search_results) > limit:
        out.append(
            Violation(
                sample.id,
                "search_results",
                f"TaskViolation: {sample.task.value} allows at most {limit} documents, "
                f"got {len(sample.search_results)}",
            )
        )
    if not sample.id:
        out.append(Violation(sample.id, "id", "id must be non-empty"))
    return out


def load_dataset(path: str | Path, task: Optional[Task | str] = None) -> Dataset:
    """Load a line-delimited sample file.

    When ``task`` is given, records declaring a different task are reported
    as violations and skipped. Raises FileUnreadable when the file cannot be
    opened and EmptyDataset when no line yields a usable sample.
    """
    path = Path(path)
    want = Task.parse(task) if task is not None else None
    try:
        fh = path.open("r", encoding="utf-8", errors="replace")
    except OSError as exc:
        raise FileUnreadable(f"{path}: {exc}") from exc

    samples: list[Sample] = []
    violations: list[Violation] = []
    seen: set[str] = set()
    skipped = 0
    well_formed = 0
    with fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                sample = sample_from_record(json.loads(line))
            except (ValueError, KeyError, TypeError) as exc:
                log.warning("%s:%d: skipping malformed record (%s)", path, lineno, exc)
                skipped += 1
                continue
            well_formed += 1
            problems = validate_sample(sample)
            if want is not None and sample.task is not want:
                problems.append(
                    Violation(sample.id, "task", f"TaskViolation: expected {want.value}")
                )
            if sample.id in seen:
                problems.append(Violation(sample.id, "id", "duplicate id"))
            if problems:
                for v in problems:
                    log.warning("%s:%d: %s", path, lineno, v)
                violations.extend(problems)
                continue
            seen.add(sample.id)
            samples.append(sample)

    if well_formed == 0:
        raise EmptyDataset(f"{path}: no well-formed records")
    return Dataset(samples=samples, source_path=str(path), skipped_count=skipped, violations=violations)


def dump_dataset(dataset: Dataset | list[Sample], path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for sample in dataset:
            fh.write(json.dumps(sample_to_record(sample), ensure_ascii=False) + "\n")
    return path
