"""Blinded side-by-side assessment backend.

Sessions pair two conditions' answer lists per question. Which condition
shows on which side is drawn once per question from a seeded source and
persisted; payloads served to assessors carry only question text, left/right
answer texts, and progress, never condition identity. Judgments append to a
JSONL journal (flushed and fsynced before acknowledgement) and the full
state rebuilds from the journal on startup.
"""
from __future__ import annotations

import json
import os
import random
import threading
import time
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

from .dataio import RunFile
from .stats import (
    binomial_sign_test,
    cohens_kappa,
    prefs_from_counts,
    wilcoxon_sign_test,
)

VERDICTS = ("Left", "Right", "Both", "Neither")

A_LEFT = "A-left"
A_RIGHT = "A-right"


@dataclass
class Session:
    session_id: str
    k: int
    seed: int
    condition_a: str
    condition_b: str
    questions: dict[str, str]             # qid -> question text
    answers_a: dict[str, list[str]]       # qid -> top-k answer texts, condition A
    answers_b: dict[str, list[str]]
    side_map: dict[str, str]              # qid -> A_LEFT | A_RIGHT
    question_order: list[str]
    shuffle_per_judge: bool = True

    def judge_order(self, judge_id: str) -> list[str]:
        if not self.shuffle_per_judge:
            return list(self.question_order)
        order = list(self.question_order)
        random.Random(f"{self.seed}\x00{judge_id}").shuffle(order)
        return order


def session_inputs_from_runs(run_a: RunFile, run_b: RunFile,
                             sentence_texts: Mapping[tuple[str, str], str],
                             k: int) -> tuple[dict, dict]:
    """Resolve two run files to per-question answer-text lists."""
    def resolve(run: RunFile) -> dict[str, list[str]]:
        out = {}
        for qid, entries in run.by_question().items():
            texts = []
            for e in entries[:k]:
                try:
                    texts.append(sentence_texts[(qid, e.key)])
                except KeyError:
                    raise ValueError(f"sidecar has no text for ({qid}, {e.key})")
            out[qid] = texts
        return out
    return resolve(run_a), resolve(run_b)


class AssessmentService:
    def __init__(self, journal_path):
        self.journal_path = journal_path
        self.sessions: dict[str, Session] = {}
        # (session, judge, qid) -> verdict; last write wins, journal keeps all
        self.judgments: dict[tuple[str, str, str], str] = {}
        self._lock = threading.Lock()
        self._replay()

    # -- persistence ---------------------------------------------------------

    def _replay(self):
        if not os.path.exists(self.journal_path):
            return
        with open(self.journal_path, encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if line:
                    self._apply(json.loads(line))

    def _apply(self, event: dict):
        if event["type"] == "session":
            self.sessions[event["session_id"]] = Session(
                session_id=event["session_id"],
                k=event["k"],
                seed=event["seed"],
                condition_a=event["condition_a"],
                condition_b=event["condition_b"],
                questions=dict(event["questions"]),
                answers_a={q: list(v) for q, v in event["answers_a"].items()},
                answers_b={q: list(v) for q, v in event["answers_b"].items()},
                side_map=dict(event["side_map"]),
                question_order=list(event["question_order"]),
                shuffle_per_judge=bool(event.get("shuffle_per_judge", True)),
            )
        elif event["type"] == "judgment":
            key = (event["session_id"], event["judge_id"], event["question_id"])
            self.judgments[key] = event["verdict"]

    def _append(self, event: dict):
        with open(self.journal_path, "a", encoding="utf-8") as f:
            f.write(json.dumps(event, ensure_ascii=False) + "\n")
            f.flush()
            os.fsync(f.fileno())

    # -- operations ----------------------------------------------------------

    def create_session(self, questions: Mapping[str, str],
                       answers_a: Mapping[str, Sequence[str]],
                       answers_b: Mapping[str, Sequence[str]],
                       k: int, seed: int,
                       condition_a: str = "A", condition_b: str = "B",
                       session_id: Optional[str] = None,
                       shuffle_per_judge: bool = True) -> str:
        if k < 1:
            raise ValueError("k must be >= 1")
        qids_a, qids_b = set(answers_a), set(answers_b)
        if qids_a != qids_b:
            missing = qids_a.symmetric_difference(qids_b)
            raise ValueError(f"runs cover different question ids: {sorted(missing)}")
        if not qids_a:
            raise ValueError("no questions to assess")
        if set(questions) < qids_a:
            raise ValueError("question text missing for some question ids")
        with self._lock:
            if session_id is None:
                session_id = f"session-{len(self.sessions) + 1:04d}"
            if session_id in self.sessions:
                raise ValueError(f"session {session_id!r} already exists")
            order = sorted(qids_a)
            rng = random.Random(seed)
            side_map = {
                qid: (A_LEFT if rng.random() < 0.5 else A_RIGHT)
                for qid in order
            }
            event = {
                "type": "session",
                "session_id": session_id,
                "k": k,
                "seed": seed,
                "condition_a": condition_a,
                "condition_b": condition_b,
                "questions": {q: questions[q] for q in order},
                "answers_a": {q: list(answers_a[q])[:k] for q in order},
                "answers_b": {q: list(answers_b[q])[:k] for q in order},
                "side_map": side_map,
                "question_order": order,
                "shuffle_per_judge": shuffle_per_judge,
            }
            self._append(event)
            self._apply(event)
            return session_id

    def _session(self, session_id: str) -> Session:
        try:
            return self.sessions[session_id]
        except KeyError:
            raise KeyError(f"unknown session: {session_id}") from None

    def next_item(self, session_id: str, judge_id: str) -> dict:
        """Blinded pair payload for the judge's next unjudged question."""
        session = self._session(session_id)
        if not judge_id:
            raise ValueError("judge_id must be nonempty")
        done = 0
        pending = None
        for qid in session.judge_order(judge_id):
            if (session_id, judge_id, qid) in self.judgments:
                done += 1
            elif pending is None:
                pending = qid
        total = len(session.question_order)
        if pending is None:
            return {"done": True, "progress": {"done": done, "total": total}}
        left, right = self._sides(session, pending)
        return {
            "done": False,
            "question_id": pending,
            "question": session.questions[pending],
            "left": left,
            "right": right,
            "progress": {"done": done, "total": total},
        }

    @staticmethod
    def _sides(session: Session, qid: str) -> tuple[list[str], list[str]]:
        a = session.answers_a[qid]
        b = session.answers_b[qid]
        if session.side_map[qid] == A_LEFT:
            return list(a), list(b)
        return list(b), list(a)

    def submit_judgment(self, session_id: str, judge_id: str,
                        question_id: str, verdict: str) -> dict:
        session = self._session(session_id)
        if verdict not in VERDICTS:
            raise ValueError(f"verdict must be one of {VERDICTS}, got {verdict!r}")
        if question_id not in session.questions:
            raise KeyError(f"unknown question: {question_id}")
        if not judge_id:
            raise ValueError("judge_id must be nonempty")
        event = {
            "type": "judgment",
            "session_id": session_id,
            "judge_id": judge_id,
            "question_id": question_id,
            "verdict": verdict,
            "timestamp": time.time(),
        }
        with self._lock:
            self._append(event)  # durable before acknowledgement
            self._apply(event)
        return {"ok": True, "question_id": question_id}

    def progress(self, session_id: str, judge_id: Optional[str] = None) -> dict:
        session = self._session(session_id)
        total = len(session.question_order)
        if judge_id is not None:
            done = sum(1 for q in session.question_order
                       if (session_id, judge_id, q) in self.judgments)
            return {"judge_id": judge_id, "done": done, "total": total}
        judges = sorted({j for (sid, j, _) in self.judgments if sid == session_id})
        return {
            "total": total,
            "judges": {
                j: sum(1 for q in session.question_order
                       if (session_id, j, q) in self.judgments)
                for j in judges
            },
        }

    def judge_verdicts(self, session_id: str, judge_id: str) -> dict[str, str]:
        session = self._session(session_id)
        return {
            qid: self.judgments[(session_id, judge_id, qid)]
            for qid in session.question_order
            if (session_id, judge_id, qid) in self.judgments
        }

    def resolve_condition(self, session: Session, qid: str, verdict: str) -> str:
        """Map a raw Left/Right verdict into condition space."""
        if verdict == "Left":
            return "prefer_a" if session.side_map[qid] == A_LEFT else "prefer_b"
        if verdict == "Right":
            return "prefer_b" if session.side_map[qid] == A_LEFT else "prefer_a"
        return verdict.lower()

    def results(self, session_id: str) -> dict:
        """Unblinded per-judge condition counts, tests, and cross-judge kappa."""
        session = self._session(session_id)
        judges = sorted({j for (sid, j, _) in self.judgments if sid == session_id})
        per_judge = {}
        resolved: dict[str, dict[str, str]] = {}
        for judge in judges:
            verdicts = self.judge_verdicts(session_id, judge)
            resolved[judge] = {
                qid: self.resolve_condition(session, qid, v)
                for qid, v in verdicts.items()
            }
            counts = {"prefer_a": 0, "prefer_b": 0, "both": 0, "neither": 0}
            for v in resolved[judge].values():
                counts[v] += 1
            ties = counts["both"] + counts["neither"]
            prefs = prefs_from_counts(counts["prefer_a"], counts["prefer_b"], ties)
            wilcoxon = wilcoxon_sign_test(prefs)
            per_judge[judge] = {
                "n": len(resolved[judge]),
                session.condition_a: counts["prefer_a"],
                session.condition_b: counts["prefer_b"],
                "both": counts["both"],
                "neither": counts["neither"],
                "binomial_p": binomial_sign_test(
                    counts["prefer_a"], counts["prefer_b"], ties),
                "wilcoxon_p": wilcoxon.p_value,
                "wilcoxon_method": wilcoxon.method,
            }
        kappa = {}
        for i, j1 in enumerate(judges):
            for j2 in judges[i + 1:]:
                shared = sorted(set(resolved[j1]) & set(resolved[j2]))
                if not shared:
                    continue
                result = cohens_kappa([resolved[j1][q] for q in shared],
                                      [resolved[j2][q] for q in shared])
                kappa[f"{j1}|{j2}"] = {
                    "kappa": result.kappa,
                    "observed_agreement": result.observed_agreement,
                    "degenerate": result.degenerate,
                    "n": len(shared),
                }
        return {
            "session_id": session_id,
            "condition_a": session.condition_a,
            "condition_b": session.condition_b,
            "judges": per_judge,
            "kappa": kappa,
        }
