"""Synthetic samples and matching stub rules for hermetic end-to-end runs.

Two question families are generated:

* code questions ("What is the code of item7?") whose answer sits in one
  paragraph of one web page;
* price questions ("What is the price of TCK7?") whose answer only exists in
  the knowledge-graph fixture, so they are answerable for Tasks 2 and 3.

The stub LLM rules answer a QA prompt correctly only when the evidence made
it into the prompt, otherwise they say "i don't know".
"""

from __future__ import annotations

import html
import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from ..corpus import FALSE_PREMISE_LABEL, Sample, SearchResult, Task
from ..llm import API_CALL, JUDGE
from .stubs import StubCross, StubEmbed, StubKG, StubLLM, StubRule, StubSuite

DOMAINS = ("finance", "movie", "music", "sports", "open")
QUESTION_TYPES = ("simple", "comparison", "aggregation", FALSE_PREMISE_LABEL, "multi-hop")
DYNAMISM = ("static", "slow-changing", "fast-changing", "real-time")
POPULARITY = ("head", "torso", "tail")

_FILLER = (
    "river mountain valley forest harbor lantern meadow orchard quarry summit "
    "ledger compass anchor beacon canyon delta glacier island jungle kettle "
    "marble nectar oasis pepper quartz saddle timber umbrella velvet walnut "
    "yonder zephyr archive bridge cobalt dune ember fjord granite hollow"
).split()

PRICE_PATH = "/finance/get_price"


def filler(rng: random.Random, n_words: int) -> str:
    return " ".join(rng.choice(_FILLER) for _ in range(n_words))


def page(paragraphs: list[str], title: str = "page") -> str:
    body = "".join(f"<div><p>{html.escape(p)}</p></div>\n" for p in paragraphs)
    return (
        f"<html><head><title>{html.escape(title)}</title>"
        "<script>var tracking = 'ignore me';</script></head>"
        f"<body><article>{body}</article><!-- footer comment --></body></html>"
    )


@dataclass
class SyntheticSet:
    samples: list[Sample]
    kg_fixtures: dict[tuple[str, tuple], Any] = field(default_factory=dict)

    def write(self, path: str | Path) -> Path:
        from ..corpus import dump_dataset

        return dump_dataset(self.samples, path)


def make_synthetic(
    task: Task | str, n: int = 10, seed: int = 0, n_docs: Optional[int] = None, ticker_prefix: str = "TCK"
) -> SyntheticSet:
    """``n`` samples for ``task``; odd samples of Tasks 2-3 ask KG-only price questions.

    Give sets that share one KG stub distinct ``ticker_prefix`` values.
    """
    task = Task.parse(task)
    rng = random.Random(f"{task.value}:{seed}")
    n_docs = n_docs or task.max_documents
    samples = []
    fixtures: dict[tuple[str, tuple], Any] = {}
    for i in range(n):
        sid = f"{task.value.lower()}-{i:03d}"
        tags = dict(
            domain_tag=DOMAINS[i % len(DOMAINS)],
            question_type_tag=QUESTION_TYPES[i % len(QUESTION_TYPES)],
            dynamism_tag=DYNAMISM[i % len(DYNAMISM)],
            popularity_tag=POPULARITY[i % len(POPULARITY)],
        )
        price_question = task.uses_kg and i % 2 == 1
        docs = []
        gold_doc = rng.randrange(n_docs)
        code = f"k{rng.randrange(10**6):06d}"
        for d in range(n_docs):
            paragraphs = [filler(rng, rng.randint(20, 120)) for _ in range(rng.randint(2, 6))]
            if d == gold_doc and not price_question:
                paragraphs.insert(rng.randrange(len(paragraphs) + 1), f"The code of item{i} is {code}.")
            if rng.random() < 0.2:
                # long unbroken paragraph forces the whitespace splitter
                paragraphs.append(filler(rng, 450))
            docs.append(
                SearchResult(
                    page_name=f"page {d} for {sid}",
                    page_url=f"https://example.test/{sid}/{d}",
                    page_snippet=filler(rng, 12),
                    page_html=page(paragraphs, f"{sid}-{d}"),
                )
            )
        if price_question:
            ticker = f"{ticker_prefix}{i}"
            price = rng.randint(1000, 90000) / 100
            question, answer = f"What is the price of {ticker}?", repr(price)
            fixtures[(PRICE_PATH, (ticker,))] = {"result": {"ticker": ticker, "price": price}}
        else:
            question, answer = f"What is the code of item{i}?", code
        samples.append(
            Sample(
                id=sid,
                question=question,
                task=task,
                search_results=tuple(docs),
                query_time="03/15/2024, 10:00:00 PT",
                answer=answer,
                **tags,
            )
        )
    return SyntheticSet(samples, fixtures)


def make_retrieval_fixture(n: int = 6, seed: int = 0) -> SyntheticSet:
    """Samples where lexical overlap favours a decoy and the canned cross-encoder favours the gold.

    The gold paragraph ("Records list itemN with code X.") shares few tokens
    with the question; the decoy repeats the question verbatim but holds no
    answer. With top_k=1 only a strategy that ranks the gold first can answer.
    """
    rng = random.Random(f"retrieval:{seed}")
    samples = []
    for i in range(n):
        code = f"z{rng.randrange(10**6):06d}"
        question = f"What is the code of item{i}?"
        # padding keeps the page over the segment limit so each paragraph is its own segment
        paragraphs = [
            f"What is the code of item{i}? Many people ask what the code of item{i} is. " * 3 + filler(rng, 120),
            f"Records list item{i} with code {code}. " + filler(rng, 120),
            filler(rng, 40),
        ]
        samples.append(
            Sample(
                id=f"gold-{i:03d}",
                question=question,
                task=Task.TASK1,
                search_results=(SearchResult(f"gold page {i}", f"https://example.test/gold/{i}", "", page(paragraphs)),),
                query_time="03/15/2024, 10:00:00 PT",
                answer=code,
                domain_tag="open",
                question_type_tag="simple",
                dynamism_tag="static",
                popularity_tag="tail",
            )
        )
    return SyntheticSet(samples)


def judge_rules() -> list[StubRule]:
    """Judge says yes iff the candidate equals the ground truth (case-insensitive)."""
    return [
        StubRule(r"(?i)Ground truth: ([^\n]*)\nCandidate answer: \1\.?\n", "yes", model=JUDGE),
        StubRule(r".", "no", model=JUDGE),
    ]


_CALL_PROMPT = r"^You can query a knowledge graph"


def llm_rules(extra: tuple[StubRule, ...] = ()) -> list[StubRule]:
    """Rules for synthetic prompts: call generation, evidence-gated QA, judge."""
    return [
        *extra,
        StubRule(_CALL_PROMPT + r".*Question: What is the price of (\w+)\?", r'get_price("\1")', model=API_CALL),
        StubRule(_CALL_PROMPT + r".*Question: What is the price of (\w+)\?", r'get_price("\1")', model="base"),
        StubRule(_CALL_PROMPT, "None", model=API_CALL),
        StubRule(_CALL_PROMPT, "None", model="base"),
        *judge_rules(),
        StubRule(r"Records list (item\d+) with code (\w+)\..*Question: What is the code of \1\?", r"\2"),
        StubRule(r"The code of (item\d+) is (\w+)\..*Question: What is the code of \1\?", r"\2"),
        StubRule(r"ticker: (\w+).*price: ([\d.]+).*Question: What is the price of \1\?", r"\2"),
        StubRule(r"price: ([\d.]+).*ticker: (\w+).*Question: What is the price of \2\?", r"\1"),
        StubRule(r"Always produce", "unknown guess"),
        StubRule(r"Question:", "i don't know"),
    ]


def gold_cross_rules() -> list[StubRule]:
    return [StubRule(r"Records list item\d+ with code", "1.0")]


def make_suite(
    kg_fixtures: Optional[dict] = None,
    llm_extra: tuple[StubRule, ...] = (),
    cross_mode: str = StubCross.TOKEN_OVERLAP,
    cross_rules: tuple[StubRule, ...] = (),
    kg_delay_rules: tuple[StubRule, ...] = (),
    seed: int = 0,
    dim: int = 64,
) -> StubSuite:
    return StubSuite(
        llm=StubLLM(llm_rules(llm_extra), seed=seed),
        embed=StubEmbed(dim=dim, seed=seed),
        cross=StubCross(cross_mode, list(cross_rules)),
        kg=StubKG(kg_fixtures or {}, delay_rules=list(kg_delay_rules)),
    )


# ---------------------------------------------------------- testdata layout


def _load_json(path: Path, default):
    return json.loads(path.read_text(encoding="utf-8")) if path.exists() else default


def suite_from_dir(root: str | Path, seed: int = 0, ports: Optional[dict[str, int]] = None) -> StubSuite:
    """Build stubs from a fixture directory.

    Layout (every file optional)::

        llm_rules.json    [{matcher, response, delay_ms, model, status}]
        cross.json        {"mode": "TokenOverlap" | "Canned", "rules": [...], "default": 0.0}
        embed.json        {"dim": 64}
        kg_fixtures.json  [{path, args, body}]
        kg_delays.json    [{matcher, delay_ms}]

    When ``llm_rules.json`` is absent the synthetic rule set is used.
    """
    root = Path(root)
    ports = ports or {}
    raw_rules = _load_json(root / "llm_rules.json", None)
    rules = [StubRule.from_dict(d) for d in raw_rules] if raw_rules is not None else llm_rules()
    cross_cfg = _load_json(root / "cross.json", {})
    embed_cfg = _load_json(root / "embed.json", {})
    kg = StubKG(
        delay_rules=[StubRule.from_dict(d) for d in _load_json(root / "kg_delays.json", [])],
        port=ports.get("kg", 0),
    )
    for entry in _load_json(root / "kg_fixtures.json", []):
        kg.add(entry["path"], entry.get("args", []), entry["body"])
    return StubSuite(
        llm=StubLLM(rules, seed=seed, port=ports.get("llm", 0)),
        embed=StubEmbed(dim=int(embed_cfg.get("dim", 64)), seed=seed, port=ports.get("embed", 0)),
        cross=StubCross(
            cross_cfg.get("mode", StubCross.TOKEN_OVERLAP),
            [StubRule.from_dict(d) for d in cross_cfg.get("rules", [])],
            float(cross_cfg.get("default", 0.0)),
            port=ports.get("cross", 0),
        ),
        kg=kg,
    )


def write_testdata(root: str | Path, sets: dict[str, SyntheticSet]) -> Path:
    """Write datasets plus a matching kg_fixtures.json into ``root``."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    merged: dict[tuple[str, tuple], Any] = {}
    for name, synth in sets.items():
        synth.write(root / f"{name}.jsonl")
        for key, body in synth.kg_fixtures.items():
            if merged.get(key, body) != body:
                raise ValueError(f"{name}: conflicting KG fixture for {key}")
            merged[key] = body
    fixtures = [{"path": path, "args": list(args), "body": body} for (path, args), body in merged.items()]
    (root / "kg_fixtures.json").write_text(json.dumps(fixtures, indent=1) + "\n", encoding="utf-8")
    return root
