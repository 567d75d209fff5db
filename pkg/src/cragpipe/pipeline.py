"""End-to-end runner: segment -> (KG call) -> rank -> prompt -> generate -> evaluate.

Samples are processed by a worker pool but every output file is ordered by
sample id, so results do not depend on scheduling. Each sample runs under a
wall-clock budget; running out of it yields a missing answer rather than a
guess.
"""

from __future__ import annotations

import json
import logging
import random
import time
from concurrent.futures import Executor, ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import httpx

from . import budget
from .config import RunConfig
from .corpus import Sample, SearchResult, load_dataset
from .errors import DeadlineExceeded, PipelineError, error_class
from .evaluation import (
    EvalRecord,
    MetricsReport,
    Unevaluable,
    classify_answer,
    crag_score,
    metrics_table,
    render_table,
)
from .generation import AnswerRecord, assemble_prompt, generate_answer, select_adapter
from .kg import CallOutcome, CallStatus, FailureClass, generate_call, load_registry, outcome_for
from .llm import API_CALL, BASE, LLMClient, LLMConfig
from .rankers import (
    CrossEncoderClient,
    EmbeddingClient,
    RankerClients,
    RankerKind,
    ScoredCandidate,
    rank_candidates,
    select_top_k,
)
from .segmenter import Segment, segment_html, snippet_segment

log = logging.getLogger(__name__)

DEADLINE_NOTE = "DeadlineExceeded"


def _segment_document(args: tuple) -> list[Segment]:
    html, snippet_text, doc_index, max_chars, include_snippet = args
    segments = segment_html(html, doc_index=doc_index, max_chars=max_chars)
    if include_snippet:
        snip = snippet_segment(SearchResult("", "", snippet_text, ""), doc_index, max_chars)
        if snip is not None:
            segments.append(snip)
    return segments


@dataclass
class SampleResult:
    sample: Sample
    answer: AnswerRecord
    eval_record: Optional[EvalRecord] = None
    unevaluable: bool = False
    kg_status: str = "skipped"
    n_segments: int = 0
    n_context: int = 0
    prompt: str = ""
    timings_ms: dict[str, int] = field(default_factory=dict)

    def log_entry(self) -> dict:
        return {
            "sample_id": self.sample.id,
            "kg_status": self.kg_status,
            "n_segments": self.n_segments,
            "n_context": self.n_context,
            "timings_ms": self.timings_ms,
        }


class Pipeline:
    """Holds the service clients and per-run executors for one configuration."""

    def __init__(
        self,
        config: RunConfig,
        llm: Optional[LLMClient] = None,
        clients: Optional[RankerClients] = None,
        registry=None,
    ):
        self.config = config
        self.llm = llm or LLMClient(
            LLMConfig(
                base_url=config.llm_url,
                model_ids=dict(config.model_ids),
                timeout_ms=config.request_timeout_ms,
                max_attempts=config.max_attempts,
                max_inflight=config.max_inflight,
            )
        )
        self.clients = clients or RankerClients(
            embed=EmbeddingClient(config.embed_url, config.request_timeout_ms),
            cross=CrossEncoderClient(config.cross_url, config.request_timeout_ms),
        )
        self.registry = registry if registry is not None else load_registry(config.registry_path)
        self._kg_http = httpx.Client(trust_env=False)
        self._doc_pool: Optional[Executor] = None
        if config.doc_executor == "thread" and config.doc_workers > 1:
            self._doc_pool = ThreadPoolExecutor(config.doc_workers, thread_name_prefix="segment")
        elif config.doc_executor == "process" and config.doc_workers > 1:
            self._doc_pool = ProcessPoolExecutor(config.doc_workers)

    def close(self) -> None:
        if self._doc_pool is not None:
            self._doc_pool.shutdown(wait=True)
        self._kg_http.close()
        self.llm.close()
        for c in (self.clients.embed, self.clients.cross):
            if c is not None:
                c.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- stages --------------------------------------------------------------

    def segment_sample(self, sample: Sample) -> list[Segment]:
        jobs = [
            (r.page_html, r.page_snippet, i, self.config.max_segment_chars, self.config.include_snippets)
            for i, r in enumerate(sample.search_results)
        ]
        mapped = self._doc_pool.map(_segment_document, jobs) if self._doc_pool else map(_segment_document, jobs)
        segments: list[Segment] = []
        deadline = budget.current()
        for doc_segments in mapped:
            segments.extend(doc_segments)
            if deadline is not None:
                deadline.check("during segmentation")
        return segments

    def kg_outcome(self, sample: Sample) -> CallOutcome:
        adapter = BASE if self.config.use_base_adapter else API_CALL
        try:
            raw = generate_call(self.llm, sample.question, sample.query_time, self.registry, adapter=adapter)
        except PipelineError as exc:
            log.info("%s: call generation failed (%s)", sample.id, exc)
            failure = FailureClass.TIMEOUT if isinstance(exc, DeadlineExceeded) else FailureClass.UNREACHABLE
            return CallOutcome.failed(failure, f"call generation: {exc}")
        return outcome_for(
            raw,
            self.registry,
            self.config.kg_url,
            self.config.request_timeout_ms,
            self.config.max_segment_chars,
            http=self._kg_http,
        )

    def candidate_pool(self, sample: Sample, timings: Optional[dict] = None) -> tuple[list[Segment], Optional[CallOutcome]]:
        timings = {} if timings is None else timings
        t0 = time.monotonic()
        segments = self.segment_sample(sample)
        timings["segment"] = int((time.monotonic() - t0) * 1000)
        outcome = None
        if sample.task.uses_kg:
            t0 = time.monotonic()
            outcome = self.kg_outcome(sample)
            timings["kg"] = int((time.monotonic() - t0) * 1000)
            segments.extend(outcome.segments)
        return segments, outcome

    def context_for(self, kind: RankerKind, sample: Sample, pool: Sequence[Segment]) -> list[ScoredCandidate]:
        ranked = rank_candidates(kind, sample.question, pool, self.clients)
        return select_top_k(ranked, self.config.top_k, self.config.char_budget)

    # -- per sample ----------------------------------------------------------

    def answer_sample(self, sample: Sample) -> SampleResult:
        cfg = self.config
        deadline = budget.Deadline(cfg.per_sample_deadline_ms / 1000)
        result = SampleResult(sample, AnswerRecord.failure(sample.id, "NotRun"))
        timings = result.timings_ms
        started = time.monotonic()
        with budget.active(deadline):
            try:
                pool, outcome = self.candidate_pool(sample, timings)
                result.n_segments = len(pool)
                if outcome is not None:
                    result.kg_status = (
                        outcome.status.value
                        if outcome.status is not CallStatus.FAILED
                        else f"Failed:{outcome.failure.value}"
                    )
                deadline.check("before ranking")
                t0 = time.monotonic()
                context = self.context_for(cfg.ranker, sample, pool)
                timings["rank"] = int((time.monotonic() - t0) * 1000)
                result.n_context = len(context)
                bundle = assemble_prompt(context, sample, cfg.prompt_char_cap)
                result.prompt = bundle.rendered
                deadline.check("before generation")
                t0 = time.monotonic()
                result.answer = generate_answer(
                    self.llm,
                    bundle,
                    sample.id,
                    adapter=select_adapter(sample.task, cfg.use_base_adapter),
                    miss_phrases=cfg.miss_phrases,
                )
                timings["generate"] = int((time.monotonic() - t0) * 1000)
            except PipelineError as exc:
                log.warning("%s: failed closed (%s)", sample.id, exc)
                result.answer = AnswerRecord.failure(sample.id, error_class(exc))
        timings["total"] = int((time.monotonic() - started) * 1000)
        if deadline.expired():
            result.answer = AnswerRecord.failure(sample.id, DEADLINE_NOTE)
        return result

    def evaluate(self, result: SampleResult) -> SampleResult:
        sample = result.sample
        if not sample.answer:
            return result
        note = result.answer.raw_text[len("[error] "):] if result.answer.raw_text.startswith("[error] ") else ""
        try:
            verdict = classify_answer(
                result.answer, sample.answer, self.config.judge_mode, self.llm, question=sample.question
            )
        except Unevaluable as exc:
            log.warning("%s", exc)
            result.unevaluable = True
            return result
        result.eval_record = EvalRecord(sample.id, verdict, self.config.judge_mode, sample.facets, note)
        return result

    def run_sample(self, sample: Sample) -> SampleResult:
        return self.evaluate(self.answer_sample(sample))


# -------------------------------------------------------------------- outputs


def _write_jsonl(path: Path, rows) -> Path:
    with path.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    return path


@dataclass
class RunSummary:
    config: RunConfig
    results: list[SampleResult]
    report: Optional[MetricsReport]
    unevaluable: int
    skipped_lines: int = 0
    violations: int = 0
    paths: dict[str, Path] = field(default_factory=dict)

    @property
    def run_name(self) -> str:
        adapter = "base" if self.config.use_base_adapter else select_adapter(self.config.task)
        return f"{adapter} / {self.config.ranker.value}"

    @property
    def eval_records(self) -> list[EvalRecord]:
        return [r.eval_record for r in self.results if r.eval_record is not None]


def write_outputs(summary: RunSummary, save_prompts: bool = False) -> dict[str, Path]:
    out = Path(summary.config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "answers": _write_jsonl(out / "answers.jsonl", (r.answer.to_dict() for r in summary.results)),
        "eval": _write_jsonl(out / "eval.jsonl", (e.to_dict() for e in summary.eval_records)),
        "run_log": _write_jsonl(out / "run_log.jsonl", (r.log_entry() for r in summary.results)),
    }
    if save_prompts:
        paths["prompts"] = _write_jsonl(
            out / "prompts.jsonl", ({"sample_id": r.sample.id, "prompt": r.prompt} for r in summary.results)
        )
    metrics = {
        "run": summary.run_name,
        "judge_mode": summary.config.judge_mode.value,
        "n_answers": len(summary.results),
        "unevaluable": summary.unevaluable,
        "skipped_lines": summary.skipped_lines,
        "violations": summary.violations,
        "report": summary.report.to_dict() if summary.report else None,
    }
    paths["metrics"] = out / "metrics.json"
    paths["metrics"].write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if summary.report is not None:
        paths["table"] = out / "metrics.txt"
        paths["table"].write_text(
            f"judge mode: {summary.config.judge_mode.value}\n"
            + metrics_table([(summary.run_name, summary.report)]),
            encoding="utf-8",
        )
    summary.paths = paths
    return paths


def run_pipeline(
    config: RunConfig,
    samples: Optional[Sequence[Sample]] = None,
    pipeline: Optional[Pipeline] = None,
    save_prompts: bool = False,
) -> RunSummary:
    skipped = violations = 0
    if samples is None:
        dataset = load_dataset(config.input_path, config.task)
        samples, skipped, violations = dataset.samples, dataset.skipped_count, len(dataset.violations)
    owned = pipeline is None
    pipe = pipeline or Pipeline(config)
    try:
        with ThreadPoolExecutor(config.parallelism, thread_name_prefix="sample") as pool:
            results = list(pool.map(pipe.run_sample, samples))
    finally:
        if owned:
            pipe.close()
    results.sort(key=lambda r: r.sample.id)
    records = [r.eval_record for r in results if r.eval_record is not None]
    summary = RunSummary(
        config=config,
        results=results,
        report=crag_score(records) if records else None,
        unevaluable=sum(r.unevaluable for r in results),
        skipped_lines=skipped,
        violations=violations,
    )
    write_outputs(summary, save_prompts)
    return summary


# ------------------------------------------------------------ retrieval study


@dataclass
class Comparison:
    rows: list[tuple[RankerKind, Optional[MetricsReport]]]
    table: str
    sample_ids: list[str]


def select_subset(samples: Sequence[Sample], budget_n: int, seed: int) -> list[Sample]:
    """Seeded shuffle of the samples with ground truth, first ``budget_n``, then id order."""
    eligible = [s for s in samples if s.answer]
    order = list(eligible)
    random.Random(seed).shuffle(order)
    return sorted(order[:budget_n], key=lambda s: s.id)


def compare_retrievers(
    config: RunConfig, sample_budget: Optional[int] = None, samples: Optional[Sequence[Sample]] = None
) -> Comparison:
    """Run every ranking strategy with the base adapter over one fixed subset."""
    if samples is None:
        samples = load_dataset(config.input_path, config.task).samples
    subset = select_subset(samples, sample_budget or config.sample_budget, config.seed)
    out = Path(config.output_dir)
    rows = []
    for kind in RankerKind:
        run_cfg = config.replace(ranker=kind, use_base_adapter=True, output_dir=str(out / kind.value))
        rows.append((kind, run_pipeline(run_cfg, samples=subset).report))
    table = render_table(
        ("Retrieval Model", "Accuracy", "CRAG"),
        [(k.label, r.accuracy if r else float("nan"), r.crag if r else float("nan")) for k, r in rows],
    )
    out.mkdir(parents=True, exist_ok=True)
    (out / "retrieval_comparison.txt").write_text(table, encoding="utf-8")
    (out / "retrieval_comparison.json").write_text(
        json.dumps(
            {
                "judge_mode": config.judge_mode.value,
                "n_samples": len(subset),
                "rows": [
                    {"retrieval_model": k.label, "kind": k.value, "report": r.to_dict() if r else None}
                    for k, r in rows
                ],
            },
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )
    return Comparison(rows, table, [s.id for s in subset])
