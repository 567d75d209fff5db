import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_llm
from cragpipe.corpus import Sample, Task
from cragpipe.generation import AnswerRecord, assemble_prompt, generate_answer, normalize, select_adapter
from cragpipe.llm import BASE
from cragpipe.prompts import ALWAYS_ANSWER_INSTRUCTION, QA_INSTRUCTION
from cragpipe.rankers import ScoredCandidate
from cragpipe.segmenter import Origin, Segment
from cragpipe.testkit.stubs import StubLLM, StubRule


def sample(task=Task.TASK1, question="Where is the Eiffel Tower?"):
    return Sample("s1", question, task, (), query_time="03/01/2024, 10:00:00 PT")


def cands(*texts, origin=Origin.WEB_PAGE):
    return [ScoredCandidate(Segment(0, t, origin), 1.0 - i / 10, i + 1, i) for i, t in enumerate(texts)]


def test_context_free_prompt():
    b = assemble_prompt([], sample())
    assert b.context_blocks == ()
    assert "[1]" not in b.rendered
    assert b.rendered.startswith("Current time: 03/01/2024")
    assert b.rendered.endswith(QA_INSTRUCTION)


def test_blocks_before_question():
    b = assemble_prompt(cands("first block", "second block"), sample())
    r = b.rendered
    assert r.index("[1] first block") < r.index("[2] second block") < r.index("Question: Where is")


def test_blocks_numbered_by_rank():
    c = cands("a", "b")
    b = assemble_prompt(list(reversed(c)), sample())
    assert b.context_blocks == ("a", "b")


def test_task1_drops_api_segments():
    mixed = cands("web text") + [ScoredCandidate(Segment(-1, "price: 203.51", Origin.API_RESPONSE), 0.5, 2, 1)]
    assert "price: 203.51" not in assemble_prompt(mixed, sample(Task.TASK1)).rendered
    assert "price: 203.51" in assemble_prompt(mixed, sample(Task.TASK2)).rendered


def test_char_cap_drops_worst_first():
    c = cands("A" * 500, "B" * 500, "C" * 500)
    b = assemble_prompt(c, sample(), prompt_char_cap=1500)
    assert len(b.rendered) <= 1500
    assert b.context_blocks == ("A" * 500, "B" * 500)


def test_char_cap_truncates_question_last():
    b = assemble_prompt(cands("x"), sample(question="q" * 5000), prompt_char_cap=1000)
    assert len(b.rendered) <= 1000 and b.context_blocks == ()


def test_always_answer_line():
    b = assemble_prompt([], sample(), always_answer=True)
    assert b.rendered.endswith(ALWAYS_ANSWER_INSTRUCTION)


@given(st.lists(st.text(min_size=1, max_size=50), max_size=8), st.integers(200, 3000))
def test_ordering_and_cap_invariants(texts, cap):
    b = assemble_prompt(cands(*texts), sample(), prompt_char_cap=cap)
    assert len(b.rendered) <= cap
    if b.context_blocks:
        last = b.rendered.rindex(f"[{len(b.context_blocks)}] ")
        assert last < b.rendered.rindex("Question: ")


def test_select_adapter():
    assert select_adapter(Task.TASK1) == "task1-qa"
    assert select_adapter(Task.TASK3) == "task3-qa"
    assert select_adapter(Task.TASK2, use_base=True) == BASE


@pytest.mark.parametrize(
    "raw,norm,miss",
    [("I don't know.", "i don't know", True), ("I DO NOT KNOW!", "i do not know", True), ("I don’t know", "i don't know", True),
     ("343,421", "343,421", False), ("  Paris \n France. ", "paris france", False)],
)
def test_answer_normalization(raw, norm, miss):
    rec = AnswerRecord.from_text("s", raw)
    assert (rec.normalized, rec.is_miss) == (norm, miss)


@given(st.text())
def test_normalize_idempotent(text):
    assert normalize(normalize(text)) == normalize(text)


def test_generate_answer_uses_task_adapter():
    with StubLLM([StubRule("Eiffel", "I don't know."), StubRule(".", "343,421")]) as stub, make_llm(stub.url) as llm:
        rec = generate_answer(llm, assemble_prompt([], sample(Task.TASK2)), "s1")
        assert rec.is_miss and stub.requests[-1]["body"]["model"] == "task2-qa"
        rec = generate_answer(llm, assemble_prompt([], sample(question="How many?")), "s1")
        assert rec.normalized == "343,421" and not rec.is_miss


def test_generate_answer_fails_closed():
    with make_llm("http://127.0.0.1:9", timeout_ms=300) as llm:
        rec = generate_answer(llm, assemble_prompt([], sample()), "s1")
    assert rec.is_miss and rec.raw_text == "[error] ServiceUnavailable"
