"""Word-overlap baselines and the four-feature vector fed to the CNN join layer.

Baseline scorers are unnormalized (raw count / idf sum); the feature
extractor returns normalized fractions in [0, 1]. For a fixed question the
normalization is a positive monotone transform, so both give the same
candidate ranking.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import FrozenSet, Sequence

from .index import IdfSource
from .text import Sentence


@dataclass(frozen=True)
class ScoredCandidate:
    question_id: str
    sentence: Sentence
    key: str
    score: float
    rank: int
    stage: str  # which scorer produced the score: "count", "idf", or "cnn"


@dataclass(frozen=True)
class OverlapFeatures:
    overlap_all: float
    idf_overlap_all: float
    overlap_content: float
    idf_overlap_content: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.overlap_all, self.idf_overlap_all,
                self.overlap_content, self.idf_overlap_content)


def word_overlap(question: Sequence[str], candidate: Sequence[str],
                 stopwords: FrozenSet[str]) -> int:
    """Distinct non-stopword question words that also appear in the candidate."""
    q = {t for t in question if t not in stopwords}
    c = {t for t in candidate if t not in stopwords}
    return len(q & c)


def idf_word_overlap(question: Sequence[str], candidate: Sequence[str],
                     stopwords: FrozenSet[str], idf: IdfSource) -> float:
    """Same overlap set, each matched word weighted by its idf."""
    q = {t for t in question if t not in stopwords}
    c = {t for t in candidate if t not in stopwords}
    return sum(idf(t) for t in q & c)


def _fraction(q: set[str], c: set[str]) -> float:
    union = q | c
    if not union:
        return 0.0
    return len(q & c) / len(union)


def _idf_fraction(q: set[str], c: set[str], idf: IdfSource) -> float:
    total = sum(idf(t) for t in q)
    if total <= 0.0:
        return 0.0
    return sum(idf(t) for t in q & c) / total


def extract_features(question: Sequence[str], candidate: Sequence[str],
                     stopwords: FrozenSet[str], idf: IdfSource) -> OverlapFeatures:
    """Normalized overlap features over all words and content words.

    Overlap slots are Jaccard fractions |Q∩C|/|Q∪C|; idf slots are
    Σ idf(Q∩C) / Σ idf(Q). A question with an empty content-token set
    yields zeros in the content slots.
    """
    q_all, c_all = set(question), set(candidate)
    q_content = {t for t in q_all if t not in stopwords}
    c_content = {t for t in c_all if t not in stopwords}
    return OverlapFeatures(
        overlap_all=_fraction(q_all, c_all),
        idf_overlap_all=_idf_fraction(q_all, c_all, idf),
        overlap_content=_fraction(q_content, c_content),
        idf_overlap_content=_idf_fraction(q_content, c_content, idf),
    )


def rerank_overlap(question_id: str, question: Sentence,
                   candidates: Sequence[Sentence], mode: str, k: int,
                   stopwords: FrozenSet[str],
                   idf: IdfSource | None = None) -> list[ScoredCandidate]:
    """Rank candidates by overlap score, truncated to the top k.

    mode 'count' uses the raw overlap count; mode 'idf' the idf-weighted
    sum (idf source required). Ties break by candidate key ascending.
    """
    if mode not in ("count", "idf"):
        raise ValueError(f"unknown rerank mode: {mode!r}")
    if mode == "idf" and idf is None:
        raise ValueError("mode 'idf' requires an idf source")
    if k < 1:
        raise ValueError("k must be >= 1")
    scored = []
    for cand in candidates:
        if mode == "count":
            score = float(word_overlap(question.tokens, cand.tokens, stopwords))
        else:
            score = idf_word_overlap(question.tokens, cand.tokens, stopwords, idf)
        scored.append((score, cand))
    scored.sort(key=lambda sc: (-sc[0], sc[1].key))
    return [
        ScoredCandidate(question_id, cand, cand.key, score, rank, mode)
        for rank, (score, cand) in enumerate(scored[:k], 1)
    ]
