"""Ranked-retrieval metrics under sparse (tri-state) judgments.

Per-question scores take a ranked key list plus a JudgmentStore; questions
with no judged-relevant key are excluded from means and counted. Unjudged
keys count as nonrelevant for MAP/MRR precision denominators, feed the RBP
residual, and are ignored entirely by b-pref.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

from .dataio import DatasetSplit, RunFile
from .transfer import JudgmentStore, transfer


def average_precision(keys: Sequence[str], question_id: str,
                      store: JudgmentStore) -> Optional[float]:
    """AP with unjudged counted nonrelevant; None when the question has R=0."""
    r_total = store.relevant_count(question_id)
    if r_total == 0:
        return None
    hits = 0
    total = 0.0
    for rank, key in enumerate(keys, 1):
        if store.judgment(question_id, key) == 1:
            hits += 1
            total += hits / rank
    return total / r_total


def reciprocal_rank(keys: Sequence[str], question_id: str,
                    store: JudgmentStore) -> float:
    for rank, key in enumerate(keys, 1):
        if store.judgment(question_id, key) == 1:
            return 1.0 / rank
    return 0.0


def rbp(keys: Sequence[str], question_id: str, store: JudgmentStore,
        p: float = 0.5, depth: Optional[int] = None) -> tuple[float, float]:
    """Rank-biased precision (base, residual) at persistence p.

    depth defaults to the list length. Ranks past the list but within depth
    are unknown and feed the residual, as does the beyond-depth tail p^depth,
    so base + residual never exceeds 1.
    """
    if not (0.0 < p < 1.0):
        raise ValueError("p must be in (0, 1)")
    d = len(keys) if depth is None else depth
    if d < 0:
        raise ValueError("depth must be >= 0")
    base = 0.0
    residual = 0.0
    for rank in range(1, d + 1):
        weight = (1.0 - p) * p ** (rank - 1)
        if rank <= len(keys):
            judgment = store.judgment(question_id, keys[rank - 1])
            if judgment == 1:
                base += weight
            elif judgment is None:
                residual += weight
        else:
            residual += weight
    residual += p ** d
    return base, residual


def bpref(keys: Sequence[str], question_id: str,
          store: JudgmentStore) -> Optional[float]:
    """Binary preference; unjudged keys are invisible. None when R=0."""
    r_total = store.relevant_count(question_id)
    if r_total == 0:
        return None
    n_total = store.nonrelevant_count(question_id)
    bound = min(r_total, n_total)
    nonrel_above = 0
    total = 0.0
    for key in keys:
        judgment = store.judgment(question_id, key)
        if judgment == 1:
            if bound == 0:
                total += 1.0
            else:
                total += 1.0 - min(nonrel_above, bound) / bound
        elif judgment == 0:
            nonrel_above += 1
    return total / r_total


def unjudged_count(keys: Sequence[str], question_id: str,
                   store: JudgmentStore) -> int:
    return sum(1 for k in keys if store.judgment(question_id, k) is None)


@dataclass
class MetricReport:
    per_question: dict[str, dict[str, float]] = field(default_factory=dict)
    means: dict[str, float] = field(default_factory=dict)
    evaluated_questions: int = 0
    excluded_questions: int = 0
    unjudged: int = 0


def evaluate_run(ranked: dict[str, list[str]], store: JudgmentStore,
                 p: float = 0.5, depth: Optional[int] = None) -> MetricReport:
    """Evaluate ranked key lists per question and aggregate means.

    Questions with no judged-relevant key are excluded from every mean;
    their count is reported. The unjudged total spans all listed keys.
    """
    report = MetricReport()
    sums = {"map": 0.0, "mrr": 0.0, "rbp": 0.0, "rbp_residual": 0.0, "bpref": 0.0}
    for qid in sorted(ranked):
        keys = ranked[qid]
        report.unjudged += unjudged_count(keys, qid, store)
        ap = average_precision(keys, qid, store)
        if ap is None:
            report.excluded_questions += 1
            continue
        rr = reciprocal_rank(keys, qid, store)
        base, residual = rbp(keys, qid, store, p=p, depth=depth)
        bp = bpref(keys, qid, store)
        row = {"map": ap, "mrr": rr, "rbp": base, "rbp_residual": residual,
               "bpref": bp, "unjudged": unjudged_count(keys, qid, store)}
        report.per_question[qid] = row
        for name in sums:
            sums[name] += row[name]
        report.evaluated_questions += 1
    n = report.evaluated_questions
    report.means = {name: (total / n if n else 0.0) for name, total in sums.items()}
    return report


def run_to_ranked(run: RunFile) -> dict[str, list[str]]:
    return {qid: [e.key for e in entries]
            for qid, entries in run.by_question().items()}


def recall_curve(pools: dict[int, dict[str, list]], dataset: DatasetSplit,
                 threshold: float = 0.7) -> list[tuple[int, float]]:
    """Fraction of relevant dataset sentences matched anywhere in the pool.

    pools maps h -> {question_id -> retrieved sentences}; each pool is
    matched against the dataset with the judgment-transfer rule and the
    distinct relevant dataset sentences found are counted.
    """
    total_relevant = 0
    relevant_ids: dict[str, set[int]] = {}
    for qid, group in dataset.groups():
        ids = {i for i, pair in enumerate(group) if pair.label == 1}
        relevant_ids[qid] = ids
        total_relevant += len(ids)
    curve = []
    for h in sorted(pools):
        if total_relevant == 0:
            curve.append((h, 0.0))
            continue
        _, records = transfer(pools[h], dataset, threshold=threshold)
        found = {
            (r.question_id, r.matched_dataset_sentence_id)
            for r in records
            if r.transferred_label == 1
            and r.matched_dataset_sentence_id in relevant_ids.get(r.question_id, ())
        }
        curve.append((h, len(found) / total_relevant))
    return curve
