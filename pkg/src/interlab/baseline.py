"""Reference retrieval: BM25 ranking and tf-idf cosine candidate generation.

Tokenization is deliberately plain: lowercase, alphanumeric runs, no stemming
and no stop words, so that scores are easy to reproduce by hand.
"""
from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

from .model import CandidateList, DocumentRecord, RankedResult, ScoredCandidate

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 1.2
    b: float = 0.75

    def __post_init__(self) -> None:
        if self.k1 < 0:
            raise ValueError("k1 must be >= 0")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError("b must be in [0, 1]")


class InvertedIndex:
    """Term postings over a fixed document collection."""

    def __init__(self, doc_ids: Sequence[str], fields: Sequence[str]) -> None:
        self.doc_ids: tuple[str, ...] = tuple(doc_ids)
        self.fields: tuple[str, ...] = tuple(fields)
        self.postings: dict[str, list[tuple[int, int]]] = {}
        self.doc_len: list[int] = []
        self.avgdl: float = 0.0

    @property
    def doc_count(self) -> int:
        return len(self.doc_ids)

    def df(self, term: str) -> int:
        return len(self.postings.get(term, ()))


def build_index(corpus: Iterable[DocumentRecord], fields: Sequence[str]) -> InvertedIndex:
    """Index the chosen text fields of every document."""
    docs = list(corpus)
    index = InvertedIndex(doc_ids=[d.doc_id for d in docs], fields=fields)
    total = 0
    for position, doc in enumerate(docs):
        counts = Counter(tokenize(doc.text(fields)))
        length = sum(counts.values())
        index.doc_len.append(length)
        total += length
        for term, tf in counts.items():
            index.postings.setdefault(term, []).append((position, tf))
    if docs and total:
        index.avgdl = total / len(docs)
    return index


def bm25_idf(doc_count: int, df: int) -> float:
    return math.log(1.0 + (doc_count - df + 0.5) / (df + 0.5))


def bm25_rank(
    index: InvertedIndex,
    query: str,
    k: int | None = None,
    params: Bm25Params = Bm25Params(),
) -> list[RankedResult]:
    """Score the collection against ``query`` and return the top ``k`` documents.

    Only documents matching at least one query term appear. Repeated query
    terms contribute once per occurrence. Equal scores are ordered by
    ascending doc id, so rankings are total and reproducible.
    """
    terms = tokenize(query)
    if not terms:
        return []
    scores: dict[int, float] = {}
    for term in terms:
        plist = index.postings.get(term)
        if not plist:
            continue
        idf = bm25_idf(index.doc_count, len(plist))
        for position, tf in plist:
            norm = params.k1 * (1.0 - params.b + params.b * index.doc_len[position] / index.avgdl)
            scores[position] = scores.get(position, 0.0) + idf * tf * (params.k1 + 1.0) / (tf + norm)
    ordered = sorted(scores.items(), key=lambda item: (-item[1], index.doc_ids[item[0]]))
    if k is not None:
        ordered = ordered[:k]
    return [
        RankedResult(doc_id=index.doc_ids[position], rank=rank, score=score)
        for rank, (position, score) in enumerate(ordered, start=1)
    ]


def _smooth_idf(doc_count: int, df: int) -> float:
    # Strictly positive, so two identical texts always reach cosine 1.0.
    return math.log((1.0 + doc_count) / (1.0 + df)) + 1.0


def _tfidf_vector(counts: Counter, idf: dict[str, float]) -> dict[str, float]:
    return {term: tf * idf[term] for term, tf in counts.items()}


def tfidf_candidates(
    source_docs: Iterable[DocumentRecord],
    target_docs: Iterable[DocumentRecord],
    fields: Sequence[str],
    top_k: int,
) -> dict[str, CandidateList]:
    """For every source document, the ``top_k`` most cosine-similar targets.

    Document frequencies are taken over both collections together. Targets
    with zero similarity are dropped; a source with no tokens in the chosen
    fields maps to an empty candidate list.
    """
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    sources = list(source_docs)
    targets = list(target_docs)
    source_counts = [Counter(tokenize(d.text(fields))) for d in sources]
    target_counts = [Counter(tokenize(d.text(fields))) for d in targets]

    df: Counter = Counter()
    for counts in source_counts + target_counts:
        df.update(counts.keys())
    doc_count = len(sources) + len(targets)
    idf = {term: _smooth_idf(doc_count, term_df) for term, term_df in df.items()}

    target_vecs = [_tfidf_vector(c, idf) for c in target_counts]
    target_norms = [math.sqrt(sum(w * w for w in vec.values())) for vec in target_vecs]

    out: dict[str, CandidateList] = {}
    for doc, counts in zip(sources, source_counts):
        vec = _tfidf_vector(counts, idf)
        norm = math.sqrt(sum(w * w for w in vec.values()))
        if norm == 0.0:
            out[doc.doc_id] = CandidateList(key=doc.doc_id, candidates=())
            continue
        sims: list[tuple[str, float]] = []
        for target, tvec, tnorm in zip(targets, target_vecs, target_norms):
            if tnorm == 0.0:
                continue
            small, large = (vec, tvec) if len(vec) <= len(tvec) else (tvec, vec)
            dot = sum(weight * large.get(term, 0.0) for term, weight in small.items())
            if dot > 0.0:
                sims.append((target.doc_id, dot / (norm * tnorm)))
        sims.sort(key=lambda pair: (-pair[1], pair[0]))
        out[doc.doc_id] = CandidateList(
            key=doc.doc_id,
            candidates=tuple(ScoredCandidate(doc_id=d, score=s) for d, s in sims[:top_k]),
        )
    return out


def recommend_for_publication(
    index: InvertedIndex,
    publication: DocumentRecord,
    k: int | None = None,
    params: Bm25Params = Bm25Params(),
    title_fields: Sequence[str] = ("title", "title_en"),
) -> list[RankedResult]:
    """Rank an indexed collection against a publication's title text."""
    query = publication.text(title_fields)
    if not tokenize(query):
        raise ValueError(f"publication {publication.doc_id!r} has no usable title text")
    return bm25_rank(index, query, k=k, params=params)
