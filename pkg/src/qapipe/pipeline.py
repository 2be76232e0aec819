"""End-to-end question pipeline: BM25 documents, sentence segmentation,
idf-overlap reranking, and optional CNN reranking of the top k.

Two conditions:
  idf      rerank every segmented sentence by idf-weighted overlap, keep k
  idf+cnn  idf rerank first, then the CNN reorders exactly those k

The CNN stage can only permute the idf stage's top k, never introduce new
sentences, so both conditions return the same sentence set for a given
(h, k).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import FrozenSet, Mapping, Optional, Sequence

from . import cnn as cnn_mod
from .dataio import RunEntry, RunFile
from .index import IdfSource, InvertedIndex
from .overlap import idf_word_overlap
from .text import Sentence, remove_stopwords, segment_sentences

log = logging.getLogger(__name__)

CONDITIONS = ("idf", "idf+cnn")


@dataclass
class PipelineConfig:
    h: int = 200
    k: int = 5
    condition: str = "idf"
    index_path: Optional[str] = None
    model_path: Optional[str] = None
    seed: int = 0

    def __post_init__(self):
        if self.condition not in CONDITIONS:
            raise ValueError(f"condition must be one of {CONDITIONS}, "
                             f"got {self.condition!r}")
        if not (self.h >= self.k >= 1):
            raise ValueError(f"need h >= k >= 1, got h={self.h}, k={self.k}")

    @property
    def needs_model(self) -> bool:
        return self.condition == "idf+cnn"


@dataclass(frozen=True)
class AnswerEntry:
    key: str
    sentence: Sentence
    score: float
    rank: int
    provenance: dict  # bm25_rank, idf_rank, idf_score, and cnn_* if applicable


@dataclass
class AnswerList:
    question_id: str
    condition: str
    entries: list[AnswerEntry] = field(default_factory=list)

    def keys(self) -> list[str]:
        return [e.key for e in self.entries]


def segment_documents(hits, doc_texts: Mapping[str, str]) -> tuple[list[Sentence], dict[str, int]]:
    """Sentences of the retrieved documents, with each doc's bm25 rank."""
    sentences: list[Sentence] = []
    doc_rank: dict[str, int] = {}
    for hit in hits:
        doc_rank[hit.doc_id] = hit.rank
        sentences.extend(segment_sentences(doc_texts[hit.doc_id], doc_id=hit.doc_id))
    return sentences, doc_rank


def run_question(question_id: str, question: Sentence, config: PipelineConfig,
                 index: InvertedIndex, doc_texts: Mapping[str, str],
                 stopwords: FrozenSet[str],
                 model: Optional[cnn_mod.ModelParams] = None,
                 idf: Optional[IdfSource] = None) -> AnswerList:
    """Answer a single question; deterministic end to end.

    idf defaults to the index's collection statistics. Zero retrieved
    documents produce an empty AnswerList (logged, not fatal).
    """
    if config.needs_model and model is None:
        raise ValueError("condition idf+cnn requires a model")
    if idf is None:
        idf = index.idf
    query = remove_stopwords(question.tokens, stopwords)
    hits = index.retrieve(query, config.h)
    if not hits:
        log.warning("question %s retrieved no documents", question_id)
        return AnswerList(question_id, config.condition)
    sentences, doc_rank = segment_documents(hits, doc_texts)

    scored = [
        (idf_word_overlap(question.tokens, s.tokens, stopwords, idf), s)
        for s in sentences
    ]
    scored.sort(key=lambda sc: (-sc[0], sc[1].key))
    top = scored[:config.k]

    provenance = {}
    for idf_rank, (idf_score, s) in enumerate(top, 1):
        provenance[s.key] = {
            "bm25_rank": doc_rank[s.doc_id],
            "idf_rank": idf_rank,
            "idf_score": idf_score,
        }

    answers = AnswerList(question_id, config.condition)
    if config.condition == "idf":
        for idf_rank, (idf_score, s) in enumerate(top, 1):
            answers.entries.append(AnswerEntry(
                key=s.key, sentence=s, score=idf_score, rank=idf_rank,
                provenance=provenance[s.key],
            ))
        return answers

    reranked = cnn_mod.rerank_cnn(
        model, question_id, question, [s for _, s in top], config.k,
        idf, stopwords,
    )
    for entry in reranked:
        prov = dict(provenance[entry.key])
        prov["cnn_rank"] = entry.rank
        prov["cnn_score"] = entry.score
        answers.entries.append(AnswerEntry(
            key=entry.key, sentence=entry.sentence, score=entry.score,
            rank=entry.rank, provenance=prov,
        ))
    return answers


def run_batch(questions: Sequence[tuple[str, Sentence]], config: PipelineConfig,
              index: InvertedIndex, doc_texts: Mapping[str, str],
              stopwords: FrozenSet[str],
              model: Optional[cnn_mod.ModelParams] = None,
              idf: Optional[IdfSource] = None,
              ) -> tuple[RunFile, dict[tuple[str, str], str], list[AnswerList]]:
    """Apply run_question over a question list.

    Returns the run file, a (qid, key) -> raw sentence text sidecar, and the
    full answer lists. Per-question failures are aggregated and re-raised at
    the end so one bad question cannot hide the rest.
    """
    run = RunFile()
    sidecar: dict[tuple[str, str], str] = {}
    answers: list[AnswerList] = []
    failures: list[str] = []
    for question_id, question in questions:
        try:
            result = run_question(question_id, question, config, index,
                                  doc_texts, stopwords, model=model, idf=idf)
        except Exception as e:  # aggregate, report at the end
            failures.append(f"{question_id}: {e}")
            continue
        answers.append(result)
        for entry in result.entries:
            run.entries.append(RunEntry(question_id, entry.key, entry.rank,
                                        entry.score, config.condition))
            sidecar[(question_id, entry.key)] = entry.sentence.raw
    if failures:
        raise RuntimeError("pipeline failures: " + "; ".join(failures))
    return run, sidecar, answers


def write_sidecar(sidecar: dict[tuple[str, str], str], path) -> None:
    """'<qid>\\t<key>\\t<text>' per line; the assessment UI reads this."""
    with open(path, "w", encoding="utf-8") as f:
        for (qid, key), text in sorted(sidecar.items()):
            clean = text.replace("\t", " ").replace("\n", " ")
            f.write(f"{qid}\t{key}\t{clean}\n")


def read_sidecar(path) -> dict[tuple[str, str], str]:
    out: dict[tuple[str, str], str] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t", 2)
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected "
                                 f"'<qid>\\t<key>\\t<text>'")
            out[(parts[0], parts[1])] = parts[2]
    return out


def read_questions(path) -> list[tuple[str, str]]:
    """Question file: '<qid>\\t<question text>' per line."""
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t", 1)
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected "
                                 f"'<qid>\\t<question text>'")
            out.append((parts[0], parts[1]))
    return out


def write_questions(questions: Sequence[tuple[str, str]], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for qid, text in questions:
            f.write(f"{qid}\t{text}\n")
