"""Candidate ranking: TF-IDF, biencoder, cross-encoder and a mean-rank ensemble.

All strategies reduce to a list of scores aligned with the candidate list.
Scores become integer ranks (1 = best) by sorting on descending score with
ties broken by the lower candidate index, which keeps every ranking a strict
permutation and makes the ensemble deterministic.
"""

from __future__ import annotations

import contextvars
import enum
import math
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import MalformedResponse, PipelineError
from .segmenter import Segment
from .service import JsonService

_TOKEN_RE = re.compile(r"[^\W_]{2,}")

DEFAULT_TOP_K = 10
DEFAULT_CHAR_BUDGET = 8000


class EmptyCorpus(PipelineError):
    pass


class DimensionMismatch(PipelineError):
    pass


class LengthMismatch(PipelineError):
    pass


class RaggedInput(PipelineError):
    pass


class RankerKind(str, enum.Enum):
    TFIDF = "tfidf"
    BIENCODER = "biencoder"
    CROSS_ENCODER = "cross-encoder"
    ENSEMBLE = "ensemble"

    @property
    def label(self) -> str:
        return _LABELS[self]


_LABELS = {
    RankerKind.TFIDF: "TF-IDF",
    RankerKind.BIENCODER: "Biencoder",
    RankerKind.CROSS_ENCODER: "Cross-encoder",
    RankerKind.ENSEMBLE: "Ensemble (mean rank)",
}

DEFAULT_RANKER = RankerKind.CROSS_ENCODER


@dataclass(frozen=True)
class ScoredCandidate:
    segment: Segment
    score: float
    rank: int
    index: int


def tokenize(text: str) -> list[str]:
    """Lowercased runs of two or more letters/digits."""
    return _TOKEN_RE.findall(text.lower())


# --------------------------------------------------------------------- tf-idf


@dataclass(frozen=True)
class TfidfIndex:
    vocabulary: dict[str, int]
    doc_freq: tuple[int, ...]
    n_docs: int
    idf: tuple[float, ...]
    doc_vectors: tuple[dict[int, float], ...]

    def vectorize(self, text: str) -> dict[int, float]:
        counts = Counter(self.vocabulary[t] for t in tokenize(text) if t in self.vocabulary)
        return _l2_normalize({col: tf * self.idf[col] for col, tf in counts.items()})


def _l2_normalize(vec: dict[int, float]) -> dict[int, float]:
    norm = math.sqrt(sum(w * w for w in vec.values()))
    if norm == 0.0:
        return {}
    return {col: w / norm for col, w in vec.items()}


def smooth_idf(n_docs: int, doc_freq: int) -> float:
    return math.log((1 + n_docs) / (1 + doc_freq)) + 1.0


def build_tfidf_index(segments: Sequence[Segment | str]) -> TfidfIndex:
    if not segments:
        raise EmptyCorpus("cannot build a TF-IDF index over zero segments")
    vocabulary: dict[str, int] = {}
    counts: list[Counter] = []
    for seg in segments:
        text = seg if isinstance(seg, str) else seg.text
        c = Counter()
        for tok in tokenize(text):
            col = vocabulary.setdefault(tok, len(vocabulary))
            c[col] += 1
        counts.append(c)
    df = [0] * len(vocabulary)
    for c in counts:
        for col in c:
            df[col] += 1
    n = len(segments)
    idf = tuple(smooth_idf(n, d) for d in df)
    vectors = tuple(
        _l2_normalize({col: tf * idf[col] for col, tf in c.items()}) for c in counts
    )
    return TfidfIndex(vocabulary, tuple(df), n, idf, vectors)


def score_tfidf(index: TfidfIndex, question: str) -> list[float]:
    query = index.vectorize(question)
    scores = []
    for doc in index.doc_vectors:
        if len(doc) < len(query):
            scores.append(sum(w * query.get(col, 0.0) for col, w in doc.items()))
        else:
            scores.append(sum(w * doc.get(col, 0.0) for col, w in query.items()))
    return scores


# ------------------------------------------------------------- remote scorers


class EmbeddingClient(JsonService):
    """Client for ``POST /embed {texts} -> {vectors}``."""

    def __init__(self, base_url: str, timeout_ms: int = 10_000, batch_size: int = 64):
        super().__init__(base_url, timeout_ms)
        self.batch_size = batch_size

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        out: list[list[float]] = []
        for start in range(0, len(texts), self.batch_size):
            batch = list(texts[start : start + self.batch_size])
            body = self.post_json("/embed", {"texts": batch})
            vectors = body.get("vectors") if isinstance(body, dict) else None
            if not isinstance(vectors, list) or len(vectors) != len(batch):
                raise MalformedResponse("embedding service returned the wrong number of vectors")
            out.extend(vectors)
        return out


class CrossEncoderClient(JsonService):
    """Client for ``POST /score {query, passages} -> {scores}``."""

    def __init__(self, base_url: str, timeout_ms: int = 10_000, batch_size: int = 64):
        super().__init__(base_url, timeout_ms)
        self.batch_size = batch_size

    def score(self, query: str, passages: Sequence[str]) -> list[float]:
        out: list[float] = []
        for start in range(0, len(passages), self.batch_size):
            batch = list(passages[start : start + self.batch_size])
            body = self.post_json("/score", {"query": query, "passages": batch})
            scores = body.get("scores") if isinstance(body, dict) else None
            if not isinstance(scores, list):
                raise MalformedResponse("cross-encoder response has no scores list")
            if len(scores) != len(batch):
                raise LengthMismatch(
                    f"cross-encoder returned {len(scores)} scores for {len(batch)} passages"
                )
            out.extend(float(s) for s in scores)
        return out


def _unit_rows(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return matrix / norms


def score_dense(client: EmbeddingClient, question: str, segments: Sequence[Segment]) -> list[float]:
    if not segments:
        return []
    vectors = client.embed([question] + [s.text for s in segments])
    dims = {len(v) for v in vectors}
    if len(dims) != 1:
        raise DimensionMismatch(f"embeddings have differing lengths {sorted(dims)}")
    unit = _unit_rows(np.asarray(vectors, dtype=float))
    return [float(x) for x in unit[1:] @ unit[0]]


def score_cross(client: CrossEncoderClient, question: str, segments: Sequence[Segment]) -> list[float]:
    if not segments:
        return []
    return client.score(question, [s.text for s in segments])


# -------------------------------------------------------------------- fusion


def ranks_from_scores(scores: Sequence[float]) -> list[int]:
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    ranks = [0] * len(scores)
    for position, i in enumerate(order, 1):
        ranks[i] = position
    return ranks


def fuse_mean_rank(rankings: Sequence[Sequence[int]]) -> list[float]:
    """Average each candidate's rank across rankings (lower is better)."""
    if not rankings:
        raise RaggedInput("need at least one ranking")
    n = len(rankings[0])
    if any(len(r) != n for r in rankings):
        raise RaggedInput("rankings differ in length")
    expected = list(range(1, n + 1))
    for r in rankings:
        if sorted(r) != expected:
            raise ValueError(f"ranking {list(r)} is not a permutation of 1..{n}")
    return [sum(r[i] for r in rankings) / len(rankings) for i in range(n)]


def order_by_mean_rank(means: Sequence[float]) -> list[int]:
    return sorted(range(len(means)), key=lambda i: (means[i], i))


# ------------------------------------------------------------------ dispatch


@dataclass
class RankerClients:
    embed: Optional[EmbeddingClient] = None
    cross: Optional[CrossEncoderClient] = None


def _strategy_scores(
    kind: RankerKind, question: str, segments: Sequence[Segment], clients: RankerClients
) -> list[float]:
    if kind is RankerKind.TFIDF:
        return score_tfidf(build_tfidf_index(segments), question)
    if kind is RankerKind.BIENCODER:
        if clients.embed is None:
            raise PipelineError("biencoder ranking needs an embedding client")
        return score_dense(clients.embed, question, segments)
    if kind is RankerKind.CROSS_ENCODER:
        if clients.cross is None:
            raise PipelineError("cross-encoder ranking needs a cross-encoder client")
        return score_cross(clients.cross, question, segments)
    raise ValueError(f"{kind} has no direct scorer")


_COMPONENTS = (RankerKind.TFIDF, RankerKind.BIENCODER, RankerKind.CROSS_ENCODER)


def strategy_scores(
    kind: RankerKind | str, question: str, segments: Sequence[Segment], clients: RankerClients
) -> list[float]:
    """Scores for one strategy; for the ensemble these are negated mean ranks."""
    kind = RankerKind(kind)
    if kind is not RankerKind.ENSEMBLE:
        return _strategy_scores(kind, question, segments, clients)
    with ThreadPoolExecutor(max_workers=len(_COMPONENTS)) as pool:
        futures = [
            pool.submit(contextvars.copy_context().run, _strategy_scores, k, question, segments, clients)
            for k in _COMPONENTS
        ]
        component_scores = [f.result() for f in futures]
    means = fuse_mean_rank([ranks_from_scores(s) for s in component_scores])
    return [-m for m in means]


def rank_candidates(
    kind: RankerKind | str,
    question: str,
    segments: Sequence[Segment],
    clients: Optional[RankerClients] = None,
) -> list[ScoredCandidate]:
    if not segments:
        return []
    scores = strategy_scores(kind, question, segments, clients or RankerClients())
    ranks = ranks_from_scores(scores)
    ranked = [ScoredCandidate(seg, scores[i], ranks[i], i) for i, seg in enumerate(segments)]
    ranked.sort(key=lambda c: c.rank)
    return ranked


def select_top_k(
    candidates: Sequence[ScoredCandidate], k: int = DEFAULT_TOP_K, char_budget: int = DEFAULT_CHAR_BUDGET
) -> list[ScoredCandidate]:
    """Best-first prefix bounded by count and cumulative characters."""
    out = []
    used = 0
    for cand in sorted(candidates, key=lambda c: c.rank):
        if len(out) >= k or used + cand.segment.char_len > char_budget:
            break
        out.append(cand)
        used += cand.segment.char_len
    return out
