import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import dense_tfidf_scores, exhaustive_fused_order, exhaustive_ranks, random_corpus
from cragpipe.errors import ServiceUnavailable
from cragpipe.rankers import (
    DEFAULT_RANKER,
    CrossEncoderClient,
    DimensionMismatch,
    EmbeddingClient,
    EmptyCorpus,
    LengthMismatch,
    RaggedInput,
    RankerClients,
    RankerKind,
    ScoredCandidate,
    build_tfidf_index,
    fuse_mean_rank,
    order_by_mean_rank,
    rank_candidates,
    ranks_from_scores,
    score_cross,
    score_dense,
    score_tfidf,
    select_top_k,
    smooth_idf,
    tokenize,
)
from cragpipe.segmenter import Segment
from cragpipe.testkit.stubs import StubCross, StubEmbed, StubRule, hash_vector


def segs(*texts):
    return [Segment(0, t) for t in texts]


@pytest.mark.parametrize(
    "text,tokens",
    [("Hello, World", ["hello", "world"]), ("a I x", []), ("AAPL's 2024 price", ["aapl", "2024", "price"])],
)
def test_tokenize(text, tokens):
    assert tokenize(text) == tokens


def test_single_token_doc():
    index = build_tfidf_index(segs("cat cat"))
    assert len(index.vocabulary) == 1
    assert list(index.doc_vectors[0].values()) == pytest.approx([1.0], abs=1e-12)


def test_idf_values():
    index = build_tfidf_index(segs("cat", "dog"))
    assert index.idf[index.vocabulary["cat"]] == pytest.approx(math.log(3 / 2) + 1, abs=1e-12)
    assert index.idf[index.vocabulary["cat"]] == pytest.approx(1.405465, abs=1e-6)
    ratio = smooth_idf(10, 10) / smooth_idf(10, 1)
    assert ratio == pytest.approx(1 / 2.7047, rel=1e-4)


def test_empty_corpus():
    with pytest.raises(EmptyCorpus):
        build_tfidf_index([])


def test_doc_vector_norms():
    index = build_tfidf_index(segs("alpha beta beta", "x y z", "gamma"))
    norms = [math.sqrt(sum(w * w for w in v.values())) for v in index.doc_vectors]
    assert norms == pytest.approx([1.0, 0.0, 1.0], abs=1e-12)
    assert all(d >= 1 for d in index.doc_freq)


def test_identical_and_disjoint_queries():
    corpus = segs("the quick brown fox", "lazy dogs sleep", "brown bears")
    assert score_tfidf(build_tfidf_index(corpus), "the quick brown fox")[0] == pytest.approx(1.0, abs=1e-9)
    assert score_tfidf(build_tfidf_index(corpus), "unrelated words") == [0.0, 0.0, 0.0]


def test_partial_overlap_matches_brute_force():
    texts = ["red fox den", "blue sea fox", "green hill"]
    got = score_tfidf(build_tfidf_index(segs(*texts)), "red fox")
    want = dense_tfidf_scores([t.split() for t in texts], ["red", "fox"])
    np.testing.assert_allclose(got, want, atol=1e-12)


@pytest.mark.parametrize("seed", range(30))
def test_tfidf_random_corpora(seed):
    docs, (qtoks, qtext) = random_corpus(random.Random(seed))
    got = score_tfidf(build_tfidf_index([t for _, t in docs]), qtext)
    want = dense_tfidf_scores([toks for toks, _ in docs], qtoks)
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-9)


def test_tfidf_agrees_with_scikit_learn():
    sklearn = pytest.importorskip("sklearn.feature_extraction.text")
    rng = random.Random(1)
    for _ in range(10):
        docs, (_, qtext) = random_corpus(rng)
        texts = [t.replace("_", " ") for _, t in docs]
        vec = sklearn.TfidfVectorizer()
        matrix = vec.fit_transform(texts)
        want = (matrix @ vec.transform([qtext.replace("_", " ")]).T).toarray().ravel()
        got = score_tfidf(build_tfidf_index(texts), qtext.replace("_", " "))
        np.testing.assert_allclose(got, want, atol=1e-9)


# ---------------------------------------------------------------- remote


@pytest.fixture
def embed_stub():
    with StubEmbed(dim=8, overrides={"same": [1, 0, 0], "q": [2, 0, 0], "orth": [0, 3, 0], "short": [1, 0]}) as s:
        yield s


def test_dense_identical_and_orthogonal(embed_stub):
    with EmbeddingClient(embed_stub.url) as client:
        assert score_dense(client, "q", segs("same", "orth")) == pytest.approx([1.0, 0.0])


def test_dense_dimension_mismatch(embed_stub):
    with EmbeddingClient(embed_stub.url) as client:
        with pytest.raises(DimensionMismatch):
            score_dense(client, "q", segs("short"))


def test_dense_matches_recomputation():
    texts = [f"segment number {i}" for i in range(5)]
    with StubEmbed(dim=64, seed=3) as stub, EmbeddingClient(stub.url, batch_size=2) as client:
        got = score_dense(client, "question", segs(*texts))
        assert stub.request_count("/embed") == 3  # 6 texts in batches of 2
    q = np.array(hash_vector("question", 64, 3))
    want = [float(np.dot(q, hash_vector(t, 64, 3))) for t in texts]
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_dense_renormalizes_client_side():
    with StubEmbed(overrides={"q": [3, 4], "a": [6, 8], "b": [-4, 3]}) as stub, EmbeddingClient(stub.url) as client:
        assert score_dense(client, "q", segs("a", "b")) == pytest.approx([1.0, 0.0])


def test_cross_scoring():
    with StubCross() as stub, CrossEncoderClient(stub.url) as client:
        assert score_cross(client, "red fox", []) == []
        scores = score_cross(client, "red fox", segs("red fox den", "blue sea"))
        assert scores[0] > scores[1]


def test_cross_canned_ranks():
    rules = [StubRule("^a$", "0.2"), StubRule("^b$", "0.9"), StubRule("^c$", "0.5")]
    with StubCross(StubCross.CANNED, rules) as stub, CrossEncoderClient(stub.url, batch_size=2) as client:
        scores = score_cross(client, "q", segs("a", "b", "c"))
    assert scores == [0.2, 0.9, 0.5]
    assert ranks_from_scores(scores) == [3, 1, 2]


def test_cross_length_mismatch():
    class Broken(StubCross):
        def handle(self, method, path, query, body):
            return 200, {"scores": [1.0]}, 0.0

    with Broken() as stub, CrossEncoderClient(stub.url) as client:
        with pytest.raises(LengthMismatch):
            score_cross(client, "q", segs("a", "b"))


def test_unreachable_scorer():
    with CrossEncoderClient("http://127.0.0.1:9", timeout_ms=500) as client:
        with pytest.raises(ServiceUnavailable):
            score_cross(client, "q", segs("a"))


# ---------------------------------------------------------------- fusion


def test_fusion_examples():
    assert order_by_mean_rank(fuse_mean_rank([[2, 1, 3]])) == [1, 0, 2]
    assert fuse_mean_rank([[1, 3, 2], [3, 1, 2]]) == [2.0, 2.0, 2.0]
    assert order_by_mean_rank([2.0, 2.0, 2.0]) == [0, 1, 2]
    means = fuse_mean_rank([[1, 2, 3], [2, 1, 3], [1, 2, 3]])
    assert means == pytest.approx([4 / 3, 5 / 3, 3.0])
    assert order_by_mean_rank(means) == [0, 1, 2]


def test_fusion_errors():
    with pytest.raises(RaggedInput):
        fuse_mean_rank([[1, 2], [1, 2, 3]])
    with pytest.raises(RaggedInput):
        fuse_mean_rank([])
    with pytest.raises(ValueError):
        fuse_mean_rank([[1, 1, 2]])


scores_st = st.lists(st.integers(0, 6).map(lambda x: x / 4), min_size=1, max_size=20)


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_ranks_match_exhaustive(data):
    scores = data.draw(scores_st)
    assert ranks_from_scores(scores) == exhaustive_ranks(scores)


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_fusion_permutation_equivariant(data):
    n = data.draw(st.integers(1, 12))
    rankings = [ranks_from_scores(data.draw(st.lists(st.floats(-5, 5), min_size=n, max_size=n))) for _ in range(3)]
    perm = data.draw(st.permutations(range(n)))
    permuted = [[r[p] for p in perm] for r in rankings]
    means = fuse_mean_rank(rankings)
    assert fuse_mean_rank(permuted) == [means[p] for p in perm]


@settings(max_examples=200, deadline=None)
@given(scores_st, st.floats(0.01, 100))
def test_scale_invariance(scores, c):
    assert ranks_from_scores([s * c for s in scores]) == ranks_from_scores(scores)


# ---------------------------------------------------------------- dispatch


def test_default_ranker():
    assert DEFAULT_RANKER is RankerKind.CROSS_ENCODER


def test_single_segment_rank_one():
    (c,) = rank_candidates(RankerKind.TFIDF, "q", segs("only one"))
    assert c.rank == 1 and c.index == 0


def test_ensemble_is_composition_of_components():
    texts = [f"fox {'den ' * (i % 3)} river {i}" for i in range(9)]
    with StubEmbed(dim=32) as e, StubCross() as c:
        clients = RankerClients(EmbeddingClient(e.url), CrossEncoderClient(c.url))
        question = "fox den"
        ranked = rank_candidates(RankerKind.ENSEMBLE, question, segs(*texts), clients)
        components = [
            ranks_from_scores([x.score for x in sorted(rank_candidates(k, question, segs(*texts), clients), key=lambda x: x.index)])
            for k in (RankerKind.TFIDF, RankerKind.BIENCODER, RankerKind.CROSS_ENCODER)
        ]
    assert [x.index for x in ranked] == exhaustive_fused_order(components)
    assert sorted(x.rank for x in ranked) == list(range(1, 10))


def cand(i, n_chars):
    return ScoredCandidate(Segment(0, "x" * n_chars), float(-i), i + 1, i)


def test_select_top_k():
    five = [cand(i, 10) for i in range(5)]
    assert select_top_k(five, 0) == []
    assert [c.index for c in select_top_k(list(reversed(five)), 2)] == [0, 1]
    three = [cand(i, 1000) for i in range(3)]
    assert len(select_top_k(three, 10, 2500)) == 2
