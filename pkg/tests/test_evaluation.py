import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_llm
from cragpipe.evaluation import (
    EmptyRecords,
    EvalRecord,
    JudgeMode,
    Unevaluable,
    Verdict,
    classify_answer,
    crag_score,
    facet_breakdown,
    metrics_table,
    report_from_verdicts,
)
from cragpipe.generation import AnswerRecord
from cragpipe.testkit.fixtures import judge_rules
from cragpipe.testkit.stubs import StubLLM

V = Verdict


def ans(text):
    return AnswerRecord.from_text("s", text)


def test_classify_exact():
    assert classify_answer(ans("i don't know"), "Paris") is V.MISSING
    assert classify_answer(ans("Paris."), "paris") is V.CORRECT
    assert classify_answer(ans("204.52"), "203.51") is V.HALLUCINATED
    with pytest.raises(ValueError):
        classify_answer(ans("x"), "")


def test_classify_llm_judge():
    with StubLLM(judge_rules()) as stub, make_llm(stub.url) as llm:
        assert classify_answer(ans("Paris"), "Paris", JudgeMode.LLM_JUDGE, llm, "q") is V.CORRECT
        assert classify_answer(ans("Lyon"), "Paris", JudgeMode.LLM_JUDGE, llm, "q") is V.HALLUCINATED
        assert classify_answer(ans("i don't know"), "Paris", JudgeMode.LLM_JUDGE, llm) is V.MISSING
        assert stub.request_count() == 2


def test_judge_failure_is_unevaluable():
    with make_llm("http://127.0.0.1:9", timeout_ms=300) as llm:
        with pytest.raises(Unevaluable):
            classify_answer(ans("Paris"), "Paris", JudgeMode.LLM_JUDGE, llm)


def counts_report(c, h, m):
    return report_from_verdicts([V.CORRECT] * c + [V.HALLUCINATED] * h + [V.MISSING] * m)


@pytest.mark.parametrize(
    "c,h,m,acc,hal,crag",
    [(164, 222, 114, 0.328, 0.444, -0.116), (121, 28, 351, 0.242, 0.056, 0.186), (199, 301, 0, 0.398, 0.602, -0.204)],
)
def test_table_rows(c, h, m, acc, hal, crag):
    r = counts_report(c, h, m)
    assert r.accuracy == pytest.approx(acc, abs=1e-12)
    assert r.hallucination_rate == pytest.approx(hal, abs=1e-12)
    assert r.crag == pytest.approx(crag, abs=1e-9)


def test_all_missing():
    r = counts_report(0, 0, 7)
    assert r.accuracy == 0 and r.crag == 0 and r.missing_rate == 1


def test_empty():
    with pytest.raises(EmptyRecords):
        crag_score([])


def rec(i, verdict, **facets):
    return EvalRecord(f"s{i}", verdict, JudgeMode.EXACT_MATCH, facets)


def test_facets_single_group():
    records = [rec(i, v, domain="finance") for i, v in enumerate([V.CORRECT, V.MISSING, V.HALLUCINATED])]
    report = crag_score(records)
    (only,) = report.by_facet["domain"].values()
    assert (only.n, only.correct, only.missing, only.hallucinated) == (3, 1, 1, 1)
    assert report.by_facet["popularity"]["(none)"].n == 3


def test_facets_known_rates():
    records = [rec(i, V.CORRECT, domain="movie") for i in range(3)]
    records += [rec(10 + i, V.HALLUCINATED, domain="movie") for i in range(1)]
    records += [rec(20 + i, V.MISSING, domain="music") for i in range(4)]
    records += [rec(30, V.CORRECT, domain="music")]
    groups = facet_breakdown(records)["domain"]
    assert groups["movie"].accuracy == 0.75 and groups["movie"].crag == 0.5
    assert groups["music"].accuracy == 0.2 and groups["music"].crag == 0.2
    assert groups["movie"].n + groups["music"].n == len(records)


verdicts = st.lists(st.sampled_from(list(Verdict)), min_size=1, max_size=60)
domains = st.sampled_from(["finance", "movie", "music", None])


@given(st.lists(st.tuples(st.sampled_from(list(Verdict)), domains), min_size=1, max_size=60), st.randoms())
def test_report_invariants(items, rnd):
    records = [rec(i, v, domain=d) for i, (v, d) in enumerate(items)]
    report = crag_score(records)
    for r in [report, *report.by_facet["domain"].values()]:
        assert r.accuracy + r.missing_rate + r.hallucination_rate == pytest.approx(1, abs=1e-9)
        assert r.crag == pytest.approx(r.accuracy - r.hallucination_rate, abs=1e-9)
    weighted = sum(g.n / report.n * g.accuracy for g in report.by_facet["domain"].values())
    assert weighted == pytest.approx(report.accuracy, abs=1e-9)
    shuffled = list(records)
    rnd.shuffle(shuffled)
    assert crag_score(shuffled).to_dict() == report.to_dict()


def test_metrics_table_columns():
    text = metrics_table([("Llama 3 8B", counts_report(164, 222, 114))])
    header, _, row = text.splitlines()
    assert [h.strip() for h in header.split("|")] == ["Model/Run", "Accuracy", "Hallucination", "CRAG"]
    assert [c.strip() for c in row.split("|")][1:] == ["0.328", "0.444", "-0.116"]


def test_record_dict():
    assert rec(1, V.MISSING).to_dict() == {"sample_id": "s1", "verdict": "Missing", "judge_mode": "ExactMatch"}
