"""Training-data curation for the per-task answer adapters and the API-call adapter.

QA targets: every sample is answered four times by the base model (once per
ranking strategy) under an instruction to always guess. If the judge accepts
none of the four guesses, the retrieval system evidently cannot support the
answer and the target becomes "i don't know". False-premise questions always
keep their original label.

API-call targets: the base model proposes a call; calls that execute
successfully are kept verbatim (canonicalized). Everything else goes to a
review file for a human, whose corrections are merged back on the next run.
"""

from __future__ import annotations

import enum
import json
import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .config import RunConfig
from .corpus import EmptyDataset, Sample, Task, load_dataset
from .errors import PipelineError, ServiceUnavailable
from .generation import assemble_prompt
from .kg import CallOutcome, FailureClass, build_call_prompt, generate_call, outcome_for, render_call
from .llm import BASE, ChatRequest, LLMClient
from .pipeline import Pipeline
from .prompts import IDK, QA_SYSTEM
from .rankers import RankerKind

log = logging.getLogger(__name__)

LORA_HYPERPARAMETERS = {"lora_rank": 256, "weight_decay": 1.0}


class ExampleTask(str, enum.Enum):
    API_CALL = "ApiCall"
    TASK1_QA = "Task1QA"
    TASK2_QA = "Task2QA"
    TASK3_QA = "Task3QA"

    @property
    def filename(self) -> str:
        return _FILES[self]

    @classmethod
    def for_task(cls, task: Task) -> "ExampleTask":
        return {Task.TASK1: cls.TASK1_QA, Task.TASK2: cls.TASK2_QA, Task.TASK3: cls.TASK3_QA}[task]


_FILES = {
    ExampleTask.API_CALL: "api_call.jsonl",
    ExampleTask.TASK1_QA: "task1_qa.jsonl",
    ExampleTask.TASK2_QA: "task2_qa.jsonl",
    ExampleTask.TASK3_QA: "task3_qa.jsonl",
}

REVIEW_FILE = "review.jsonl"
SIDECAR_FILE = "training_meta.json"


class Provenance(str, enum.Enum):
    ORIGINAL_LABEL = "OriginalLabel"
    RELABELED_MISS = "RelabeledMiss"
    SUCCESSFUL_CALL = "SuccessfulCall"
    NONE_TARGET = "NoneTarget"
    NEEDS_REVIEW = "NeedsReview"


class UnwritableDirectory(PipelineError):
    pass


@dataclass(frozen=True)
class TrainingExample:
    sample_id: str
    task: ExampleTask
    prompt: str
    target: str
    provenance: Provenance
    raw_generation: str = ""

    @property
    def relabeled(self) -> bool:
        return self.provenance is Provenance.RELABELED_MISS

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "prompt": self.prompt,
            "target": self.target,
            "relabeled": self.relabeled,
            "provenance": self.provenance.value,
        }

    def review_row(self) -> dict:
        return {"sample_id": self.sample_id, "raw_generation": self.raw_generation, "corrected_call": None}


@dataclass
class CurationResult:
    examples: list[TrainingExample] = field(default_factory=list)
    skipped: int = 0

    def counts(self) -> Counter:
        return Counter(e.provenance.value for e in self.examples)


def _ordered_map(fn, items: Sequence, workers: int) -> list:
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(fn, items))


# ----------------------------------------------------------------- QA targets


def relabel_qa_targets(
    samples: Iterable[Sample],
    pipeline: Pipeline,
    judge: Optional[LLMClient] = None,
    kinds: Sequence[RankerKind] = tuple(RankerKind),
) -> CurationResult:
    judge = judge or pipeline.llm
    cfg = pipeline.config
    llm = pipeline.llm
    samples = list(samples)
    labelled = [s for s in samples if s.answer]
    skipped = len(samples) - len(labelled)

    def one(sample: Sample) -> TrainingExample:
        pool, _ = pipeline.candidate_pool(sample)
        contexts = {kind: pipeline.context_for(kind, sample, pool) for kind in kinds}
        if cfg.ranker not in contexts:
            contexts[cfg.ranker] = pipeline.context_for(cfg.ranker, sample, pool)
        prompt = assemble_prompt(contexts[cfg.ranker], sample, cfg.prompt_char_cap).rendered
        example_task = ExampleTask.for_task(sample.task)
        if sample.false_premise:
            return TrainingExample(sample.id, example_task, prompt, sample.answer, Provenance.ORIGINAL_LABEL)
        guesses = []
        for kind in kinds:
            bundle = assemble_prompt(contexts[kind], sample, cfg.prompt_char_cap, always_answer=True)
            reply = llm.chat(ChatRequest(adapter=BASE, system=QA_SYSTEM, user=bundle.rendered, max_tokens=128))
            guesses.append(reply.text)
        if any(judge.judge_correct(sample.question, sample.answer, g) for g in guesses):
            return TrainingExample(sample.id, example_task, prompt, sample.answer, Provenance.ORIGINAL_LABEL)
        return TrainingExample(sample.id, example_task, prompt, IDK, Provenance.RELABELED_MISS)

    examples = _ordered_map(one, labelled, cfg.parallelism)
    if skipped:
        log.info("relabel: skipped %d samples without ground truth", skipped)
    return CurationResult(examples, skipped)


# ---------------------------------------------------------------- API targets


def load_corrections(path: str | Path) -> dict[str, Optional[str]]:
    """Review file rows ``{sample_id, raw_generation, corrected_call}`` keyed by id."""
    out = {}
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                row = json.loads(line)
                out[str(row["sample_id"])] = row.get("corrected_call")
    return out


def _checked(outcome: CallOutcome) -> CallOutcome:
    if outcome.failure is FailureClass.UNREACHABLE:
        raise ServiceUnavailable(f"KG endpoint unreachable: {outcome.detail}")
    return outcome


def curate_api_targets(
    samples: Iterable[Sample],
    pipeline: Pipeline,
    corrections: Optional[dict[str, Optional[str]]] = None,
) -> CurationResult:
    """API-call targets for Task 2/3 samples. Aborts if the KG service is unreachable."""
    cfg = pipeline.config
    corrections = corrections or {}
    eligible = [s for s in samples if s.task.uses_kg]

    def run(raw: str) -> CallOutcome:
        return _checked(
            outcome_for(raw, pipeline.registry, cfg.kg_url, cfg.request_timeout_ms, cfg.max_segment_chars)
        )

    def one(sample: Sample) -> TrainingExample:
        prompt = build_call_prompt(sample.question, sample.query_time, pipeline.registry)
        raw = generate_call(pipeline.llm, sample.question, sample.query_time, pipeline.registry, adapter=BASE)
        outcome = run(raw)
        if outcome.executed:
            return TrainingExample(
                sample.id, ExampleTask.API_CALL, prompt, render_call(outcome.call), Provenance.SUCCESSFUL_CALL, raw
            )
        if sample.id not in corrections:
            return TrainingExample(sample.id, ExampleTask.API_CALL, prompt, "", Provenance.NEEDS_REVIEW, raw)
        corrected = corrections[sample.id]
        if corrected:
            fixed = run(corrected)
            if fixed.executed:
                return TrainingExample(
                    sample.id, ExampleTask.API_CALL, prompt, render_call(fixed.call), Provenance.SUCCESSFUL_CALL, raw
                )
        return TrainingExample(sample.id, ExampleTask.API_CALL, prompt, "None", Provenance.NONE_TARGET, raw)

    return CurationResult(_ordered_map(one, eligible, cfg.parallelism))


# ------------------------------------------------------------------ emission


def emit_training_files(
    examples: Iterable[TrainingExample], out_dir: str | Path, extra_meta: Optional[dict] = None
) -> dict[str, Path]:
    """One file per example task, a review file for NeedsReview rows, and a metadata sidecar."""
    out = Path(out_dir)
    examples = sorted(examples, key=lambda e: (e.sample_id, e.task.value))
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths: dict[str, Path] = {}
        for task in ExampleTask:
            path = out / task.filename
            rows = [e for e in examples if e.task is task and e.provenance is not Provenance.NEEDS_REVIEW]
            path.write_text("".join(json.dumps(e.to_dict(), ensure_ascii=False) + "\n" for e in rows), encoding="utf-8")
            paths[task.value] = path
        review = [e for e in examples if e.provenance is Provenance.NEEDS_REVIEW]
        review_path = out / REVIEW_FILE
        if review:
            review_path.write_text(
                "".join(json.dumps(e.review_row(), ensure_ascii=False) + "\n" for e in review), encoding="utf-8"
            )
            paths["review"] = review_path
        elif review_path.exists():
            review_path.unlink()
        meta = {
            **LORA_HYPERPARAMETERS,
            "counts": {
                task.value: sum(1 for e in examples if e.task is task and e.provenance is not Provenance.NEEDS_REVIEW)
                for task in ExampleTask
            },
            "needs_review": len(review),
            **(extra_meta or {}),
        }
        sidecar = out / SIDECAR_FILE
        sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        paths["sidecar"] = sidecar
    except OSError as exc:
        raise UnwritableDirectory(f"{out}: {exc}") from exc
    return paths


@dataclass
class CurationSummary:
    paths: dict[str, Path]
    counts: Counter
    skipped: int


def run_curation(config: RunConfig, samples: Optional[Sequence[Sample]] = None, pipeline: Optional[Pipeline] = None) -> CurationSummary:
    if samples is None:
        try:
            samples = load_dataset(config.input_path, config.task).samples
        except EmptyDataset:
            log.warning("%s: no usable samples; emitting empty training files", config.input_path)
            samples = []
    owned = pipeline is None
    pipe = pipeline or Pipeline(config)
    try:
        qa = relabel_qa_targets(samples, pipe)
        corrections = load_corrections(config.corrections_path) if config.corrections_path else None
        api = curate_api_targets(samples, pipe, corrections) if config.task.uses_kg else CurationResult()
    finally:
        if owned:
            pipe.close()
    examples = qa.examples + api.examples
    paths = emit_training_files(examples, config.output_dir, {"task": config.task.value})
    return CurationSummary(paths, qa.counts() + api.counts(), qa.skipped)
