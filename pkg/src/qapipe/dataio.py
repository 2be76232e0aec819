"""Dataset, run-file, qrels, and embedding I/O.

File formats:
  dataset    JSONL, one pair per line: {"qid", "question", "candidate", "label"}
  run        '<qid> Q0 <key> <rank> <score> <tag>', score with 6 decimals
  qrels      '<qid> 0 <key> <rel>' with rel in {0, 1}
  embeddings optional '<count> <dim>' header, then '<token> <v1> ... <vdim>'
  corpus     JSONL, one document per line: {"doc_id", "text"}
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional

import numpy as np

from .text import Sentence, sentence


class FormatError(ValueError):
    """Malformed input file; message carries path and line number."""


@dataclass(frozen=True)
class QAPair:
    question_id: str
    question: Sentence
    candidate: Sentence
    label: int

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")
        if not self.question_id:
            raise ValueError("question_id must be nonempty")


@dataclass
class DatasetSplit:
    """QA pairs grouped by question id; group order stable under reload."""

    name: str
    pairs: list[QAPair] = field(default_factory=list)

    def groups(self) -> list[tuple[str, list[QAPair]]]:
        order: list[str] = []
        by_qid: dict[str, list[QAPair]] = {}
        for pair in self.pairs:
            if pair.question_id not in by_qid:
                by_qid[pair.question_id] = []
                order.append(pair.question_id)
            by_qid[pair.question_id].append(pair)
        return [(qid, by_qid[qid]) for qid in order]

    @property
    def num_questions(self) -> int:
        return len({p.question_id for p in self.pairs})

    @property
    def num_positive(self) -> int:
        return sum(1 for p in self.pairs if p.label == 1)

    @property
    def num_negative(self) -> int:
        return sum(1 for p in self.pairs if p.label == 0)


def load_trecqa(path, split_name: str) -> DatasetSplit:
    """Load a dataset split from canonical JSONL; group pairs by qid."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    raw: list[QAPair] = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise FormatError(f"{path}:{lineno}: bad JSON: {e}") from None
            try:
                qid = str(rec["qid"])
                qtext = rec["question"]
                ctext = rec["candidate"]
                label = rec["label"]
            except KeyError as e:
                raise FormatError(f"{path}:{lineno}: missing field {e}") from None
            if label not in (0, 1):
                raise FormatError(f"{path}:{lineno}: label must be 0 or 1, got {label!r}")
            cand = sentence(ctext)
            if not cand.tokens:
                raise FormatError(f"{path}:{lineno}: empty candidate text")
            raw.append(QAPair(qid, sentence(qtext), cand, label))
    # regroup by first appearance so groups are contiguous
    split = DatasetSplit(name=split_name)
    for _, group in DatasetSplit("tmp", raw).groups():
        split.pairs.extend(group)
    return split


def write_trecqa(split: DatasetSplit, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for _, group in split.groups():
            for p in group:
                f.write(json.dumps({
                    "qid": p.question_id,
                    "question": p.question.raw,
                    "candidate": p.candidate.raw,
                    "label": p.label,
                }, ensure_ascii=False) + "\n")


def convert_parallel_trecqa(id_path, question_path, candidate_path, label_path,
                            out_path, split_name: str = "converted") -> DatasetSplit:
    """Convert the four-parallel-file community layout to canonical JSONL."""
    files = [Path(p) for p in (id_path, question_path, candidate_path, label_path)]
    lines = []
    for p in files:
        with open(p, encoding="utf-8") as f:
            lines.append(f.read().splitlines())
    n = {len(l) for l in lines}
    if len(n) != 1:
        raise FormatError(f"parallel files disagree on line count: {sorted(n)}")
    split = DatasetSplit(name=split_name)
    for i, (qid, q, c, y) in enumerate(zip(*lines), 1):
        if y.strip() not in ("0", "1"):
            raise FormatError(f"{label_path}:{i}: label must be 0 or 1, got {y.strip()!r}")
        split.pairs.append(QAPair(qid.strip(), sentence(q), sentence(c), int(y)))
    write_trecqa(split, out_path)
    return load_trecqa(out_path, split_name)


# ---------------------------------------------------------------------------
# run files

@dataclass(frozen=True)
class RunEntry:
    question_id: str
    key: str
    rank: int
    score: float
    tag: str


@dataclass
class RunFile:
    entries: list[RunEntry] = field(default_factory=list)

    def by_question(self) -> dict[str, list[RunEntry]]:
        out: dict[str, list[RunEntry]] = {}
        for e in self.entries:
            out.setdefault(e.question_id, []).append(e)
        return out

    def validate(self) -> None:
        for qid, entries in self.by_question().items():
            prev_rank = 0
            prev_score = None
            for e in entries:
                if e.rank != prev_rank + 1:
                    raise FormatError(f"rank gap at question {qid}: expected "
                                      f"{prev_rank + 1}, got {e.rank}")
                if prev_score is not None and e.score > prev_score:
                    raise FormatError(f"score inversion at question {qid} rank {e.rank}")
                prev_rank = e.rank
                prev_score = e.score


def write_run(run: RunFile, path) -> None:
    run.validate()
    with open(path, "w", encoding="utf-8") as f:
        for e in run.entries:
            f.write(f"{e.question_id} Q0 {e.key} {e.rank} {e.score:.6f} {e.tag}\n")


def read_run(path) -> RunFile:
    run = RunFile()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 6 or parts[1] != "Q0":
                raise FormatError(f"{path}:{lineno}: expected '<qid> Q0 <key> "
                                  f"<rank> <score> <tag>'")
            qid, _, key, rank, score, tag = parts
            try:
                run.entries.append(RunEntry(qid, key, int(rank), float(score), tag))
            except ValueError:
                raise FormatError(f"{path}:{lineno}: bad rank or score") from None
    run.validate()
    return run


# ---------------------------------------------------------------------------
# qrels

def write_qrels(labels: dict[tuple[str, str], int], path) -> None:
    """labels maps (qid, key) -> 0/1; unjudged keys are simply absent."""
    with open(path, "w", encoding="utf-8") as f:
        for (qid, key), rel in sorted(labels.items()):
            if rel not in (0, 1):
                raise ValueError(f"qrels relevance must be 0 or 1, got {rel!r}")
            f.write(f"{qid} 0 {key} {rel}\n")


def read_qrels(path) -> dict[tuple[str, str], int]:
    labels: dict[tuple[str, str], int] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 4:
                raise FormatError(f"{path}:{lineno}: expected '<qid> 0 <key> <rel>'")
            qid, _, key, rel = parts
            if rel not in ("0", "1"):
                raise FormatError(f"{path}:{lineno}: relevance must be 0 or 1")
            labels[(qid, key)] = int(rel)
    return labels


# ---------------------------------------------------------------------------
# corpus documents

def read_corpus(path) -> Iterator[tuple[str, str]]:
    """Yield (doc_id, text) from a corpus JSONL file."""
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                yield str(rec["doc_id"]), str(rec["text"])
            except (json.JSONDecodeError, KeyError) as e:
                raise FormatError(f"{path}:{lineno}: bad corpus record: {e}") from None


def write_corpus(docs: Iterable[tuple[str, str]], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for doc_id, text in docs:
            f.write(json.dumps({"doc_id": doc_id, "text": text}, ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# embeddings

class EmbeddingTable:
    """Token -> vector lookup with deterministic out-of-vocabulary fallback.

    OOV vectors are uniform in [-0.25, 0.25] per component, seeded by a
    stable hash of (token, seed), and cached so repeated lookups return the
    same array object.
    """

    def __init__(self, dim: int, vectors: Optional[dict[str, np.ndarray]] = None,
                 seed: int = 0):
        if dim <= 0:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.vectors: dict[str, np.ndarray] = vectors or {}
        self.seed = seed
        self._oov_cache: dict[str, np.ndarray] = {}
        for tok, vec in self.vectors.items():
            if vec.shape != (dim,):
                raise ValueError(f"vector for {tok!r} has shape {vec.shape}, "
                                 f"expected ({dim},)")

    def __contains__(self, token: str) -> bool:
        return token in self.vectors

    def __len__(self) -> int:
        return len(self.vectors)

    def lookup(self, token: str) -> np.ndarray:
        vec = self.vectors.get(token)
        if vec is not None:
            return vec
        vec = self._oov_cache.get(token)
        if vec is None:
            digest = hashlib.sha256(f"{self.seed}\x00{token}".encode()).digest()
            rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
            vec = rng.uniform(-0.25, 0.25, self.dim).astype(np.float32)
            self._oov_cache[token] = vec
        return vec

    def matrix(self, tokens: Iterable[str]) -> np.ndarray:
        """Stack lookups into a (len(tokens), dim) float32 matrix."""
        rows = [self.lookup(t) for t in tokens]
        if not rows:
            return np.zeros((0, self.dim), dtype=np.float32)
        return np.stack(rows).astype(np.float32, copy=False)

    def vocabulary_hash(self) -> str:
        h = hashlib.sha256()
        h.update(f"dim={self.dim}".encode())
        for tok in sorted(self.vectors):
            h.update(tok.encode())
            h.update(np.asarray(self.vectors[tok], dtype=np.float32).tobytes())
        return h.hexdigest()


def load_embeddings(path, seed: int = 0) -> EmbeddingTable:
    """Load text-format embeddings; dim inferred from the first vector row."""
    vectors: dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            parts = line.rstrip("\n").split(" ")
            parts = [p for p in parts if p]
            if not parts:
                continue
            if lineno == 1 and len(parts) == 2:
                try:
                    int(parts[0]), int(parts[1])
                    dim = int(parts[1])
                    continue  # '<count> <dim>' header
                except ValueError:
                    pass
            token, values = parts[0], parts[1:]
            try:
                vec = np.array([float(v) for v in values], dtype=np.float32)
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric vector component") from None
            if dim is None:
                if len(vec) == 0:
                    raise FormatError(f"{path}:{lineno}: empty vector row")
                dim = len(vec)
            if len(vec) != dim:
                raise FormatError(f"{path}:{lineno}: expected {dim} components, "
                                  f"got {len(vec)}")
            vectors[token] = vec
    if dim is None:
        raise FormatError(f"{path}: no vectors found")
    return EmbeddingTable(dim=dim, vectors=vectors, seed=seed)


def write_embeddings(table: EmbeddingTable, path, header: bool = True) -> None:
    with open(path, "w", encoding="utf-8") as f:
        if header:
            f.write(f"{len(table.vectors)} {table.dim}\n")
        for tok in table.vectors:
            vals = " ".join(repr(float(v)) for v in table.vectors[tok])
            f.write(f"{tok} {vals}\n")
