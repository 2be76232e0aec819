"""Transfer dataset relevance labels onto retrieved sentences via Jaccard match.

Retrieved collection sentences rarely string-match the annotated dataset
sentences (tokenization, prefixes), so labels move across when the token-set
Jaccard similarity is strictly above the threshold. Matching is restricted
to dataset sentences of the same question.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Optional

from .dataio import DatasetSplit, read_qrels, write_qrels
from .text import Sentence, jaccard

DEFAULT_THRESHOLD = 0.7

RELEVANT = 1
NONRELEVANT = 0


class JudgmentStore:
    """Sparse labels keyed by (question_id, sentence_key); absent = unjudged."""

    def __init__(self, labels: Optional[dict[tuple[str, str], int]] = None):
        self._labels: dict[tuple[str, str], int] = {}
        self._counts: dict[tuple[str, int], int] = {}
        if labels:
            for key, rel in labels.items():
                self.add(key[0], key[1], rel)

    def add(self, question_id: str, key: str, relevance: int) -> None:
        if relevance not in (RELEVANT, NONRELEVANT):
            raise ValueError(f"relevance must be 0 or 1, got {relevance!r}")
        existing = self._labels.get((question_id, key))
        if existing is not None:
            if existing != relevance:
                raise ValueError(f"conflicting labels for ({question_id}, {key})")
            return
        self._labels[(question_id, key)] = relevance
        counter = (question_id, relevance)
        self._counts[counter] = self._counts.get(counter, 0) + 1

    def judgment(self, question_id: str, key: str) -> Optional[int]:
        """1 judged-relevant, 0 judged-nonrelevant, None unjudged."""
        return self._labels.get((question_id, key))

    def relevant_count(self, question_id: str) -> int:
        return self._counts.get((question_id, RELEVANT), 0)

    def nonrelevant_count(self, question_id: str) -> int:
        return self._counts.get((question_id, NONRELEVANT), 0)

    def question_ids(self) -> list[str]:
        return sorted({qid for qid, _ in self._labels})

    def as_dict(self) -> dict[tuple[str, str], int]:
        return dict(self._labels)

    def __len__(self) -> int:
        return len(self._labels)

    def __eq__(self, other) -> bool:
        return isinstance(other, JudgmentStore) and self._labels == other._labels


@dataclass(frozen=True)
class MatchRecord:
    question_id: str
    sentence_key: str
    matched_dataset_sentence_id: int
    jaccard: float
    transferred_label: int


def transfer(retrieved: dict[str, list[Sentence]], dataset: DatasetSplit,
             threshold: float = DEFAULT_THRESHOLD,
             ) -> tuple[JudgmentStore, list[MatchRecord]]:
    """Label retrieved sentences from the best same-question dataset match.

    retrieved maps question_id -> sentences (each with a stable key). A label
    transfers iff the best Jaccard is strictly above the threshold. Equal-best
    ties prefer the relevant label, then the lowest dataset sentence id.
    """
    if not (0.0 < threshold <= 1.0):
        raise ValueError("threshold must be in (0, 1]")
    annotated: dict[str, list[tuple[int, frozenset, int]]] = {}
    for qid, group in dataset.groups():
        annotated[qid] = [
            (i, pair.candidate.token_set(), pair.label)
            for i, pair in enumerate(group)
        ]
    store = JudgmentStore()
    records: list[MatchRecord] = []
    for qid in sorted(retrieved):
        pool = annotated.get(qid, [])
        for sent in retrieved[qid]:
            best: Optional[tuple[float, int, int]] = None  # (jaccard, label, sid)
            stoks = sent.token_set()
            for sid, ctoks, label in pool:
                j = jaccard(stoks, ctoks)
                if best is None or j > best[0] or (
                        j == best[0] and (label, -sid) > (best[1], -best[2])):
                    best = (j, label, sid)
            if best is not None and best[0] > threshold:
                store.add(qid, sent.key, best[1])
                records.append(MatchRecord(qid, sent.key, best[2], best[0], best[1]))
    return store, records


def export_qrels(store: JudgmentStore, path) -> None:
    write_qrels(store.as_dict(), path)


def load_qrels_store(path) -> JudgmentStore:
    return JudgmentStore(read_qrels(path))


def write_match_audit(records: Iterable[MatchRecord], path) -> None:
    """Match-audit JSONL: one MatchRecord per line, for manual inspection."""
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps({
                "qid": r.question_id,
                "key": r.sentence_key,
                "dataset_sentence_id": r.matched_dataset_sentence_id,
                "jaccard": r.jaccard,
                "label": r.transferred_label,
            }) + "\n")
