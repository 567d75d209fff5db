"""Verdicts, CRAG scoring and facet breakdowns.

A correct answer scores 1, a missing one 0 and a hallucinated one -1, so the
aggregate score is accuracy minus hallucination rate.
"""

from __future__ import annotations

import enum
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

from .errors import PipelineError
from .generation import AnswerRecord, normalize
from .llm import LLMClient

log = logging.getLogger(__name__)

FACET_DIMENSIONS = ("domain", "question_type", "dynamism", "popularity")
UNTAGGED = "(none)"


class Verdict(str, enum.Enum):
    CORRECT = "Correct"
    MISSING = "Missing"
    HALLUCINATED = "Hallucinated"

    @property
    def points(self) -> int:
        return {Verdict.CORRECT: 1, Verdict.MISSING: 0, Verdict.HALLUCINATED: -1}[self]


class JudgeMode(str, enum.Enum):
    EXACT_MATCH = "ExactMatch"
    LLM_JUDGE = "LlmJudge"


class EmptyRecords(PipelineError):
    pass


class Unevaluable(PipelineError):
    """The judge could not produce a verdict; the record must be excluded."""


@dataclass(frozen=True)
class EvalRecord:
    sample_id: str
    verdict: Verdict
    judge_mode: JudgeMode
    facets: Mapping[str, Optional[str]] = field(default_factory=dict)
    note: str = ""

    def to_dict(self) -> dict:
        out = {
            "sample_id": self.sample_id,
            "verdict": self.verdict.value,
            "judge_mode": self.judge_mode.value,
        }
        if self.note:
            out["note"] = self.note
        return out


@dataclass
class MetricsReport:
    n: int
    correct: int
    missing: int
    hallucinated: int
    by_facet: dict[str, dict[str, "MetricsReport"]] = field(default_factory=dict)

    @property
    def accuracy(self) -> float:
        return self.correct / self.n

    @property
    def missing_rate(self) -> float:
        return self.missing / self.n

    @property
    def hallucination_rate(self) -> float:
        return self.hallucinated / self.n

    @property
    def crag(self) -> float:
        return (self.correct - self.hallucinated) / self.n

    def to_dict(self) -> dict:
        out = {
            "n": self.n,
            "accuracy": self.accuracy,
            "missing_rate": self.missing_rate,
            "hallucination_rate": self.hallucination_rate,
            "crag": self.crag,
            "counts": {"correct": self.correct, "missing": self.missing, "hallucinated": self.hallucinated},
        }
        if self.by_facet:
            out["by_facet"] = {
                dim: {value: r.to_dict() for value, r in groups.items()}
                for dim, groups in self.by_facet.items()
            }
        return out


def classify_answer(
    answer: AnswerRecord,
    truth: str,
    judge_mode: JudgeMode = JudgeMode.EXACT_MATCH,
    judge: Optional[LLMClient] = None,
    question: str = "",
) -> Verdict:
    if not truth:
        raise ValueError("ground truth must be non-empty")
    if answer.is_miss:
        return Verdict.MISSING
    if JudgeMode(judge_mode) is JudgeMode.EXACT_MATCH:
        correct = normalize(answer.normalized) == normalize(truth)
    else:
        if judge is None:
            raise ValueError("LlmJudge mode needs a judge client")
        try:
            correct = judge.judge_correct(question, truth, answer.raw_text)
        except PipelineError as exc:
            raise Unevaluable(f"{answer.sample_id}: judge failed ({exc})") from exc
    return Verdict.CORRECT if correct else Verdict.HALLUCINATED


def report_from_verdicts(verdicts: Iterable[Verdict]) -> MetricsReport:
    counts = Counter(verdicts)
    n = sum(counts.values())
    if n == 0:
        raise EmptyRecords("no records to score")
    return MetricsReport(
        n=n,
        correct=counts[Verdict.CORRECT],
        missing=counts[Verdict.MISSING],
        hallucinated=counts[Verdict.HALLUCINATED],
    )


def facet_breakdown(records: Sequence[EvalRecord]) -> dict[str, dict[str, MetricsReport]]:
    out: dict[str, dict[str, MetricsReport]] = {}
    for dim in FACET_DIMENSIONS:
        groups: dict[str, list[Verdict]] = {}
        for r in records:
            groups.setdefault(r.facets.get(dim) or UNTAGGED, []).append(r.verdict)
        out[dim] = {value: report_from_verdicts(vs) for value, vs in sorted(groups.items()) if vs}
    return out


def crag_score(records: Sequence[EvalRecord], with_facets: bool = True) -> MetricsReport:
    report = report_from_verdicts(r.verdict for r in records)
    if with_facets:
        report.by_facet = facet_breakdown(records)
    return report


def render_table(headers: Sequence[str], rows: Sequence[Sequence[object]]) -> str:
    """Plain aligned text table; floats printed with three decimals."""
    cells = [[f"{v:.3f}" if isinstance(v, float) else str(v) for v in row] for row in rows]
    widths = [max([len(h)] + [len(r[i]) for r in cells]) for i, h in enumerate(headers)]

    def line(values):
        return " | ".join(
            v.ljust(w) if i == 0 else v.rjust(w) for i, (v, w) in enumerate(zip(values, widths))
        ).rstrip()

    sep = "-+-".join("-" * w for w in widths)
    return "\n".join([line(headers), sep] + [line(r) for r in cells]) + "\n"


def metrics_table(runs: Sequence[tuple[str, MetricsReport]]) -> str:
    return render_table(
        ("Model/Run", "Accuracy", "Hallucination", "CRAG"),
        [(name, r.accuracy, r.hallucination_rate, r.crag) for name, r in runs],
    )
