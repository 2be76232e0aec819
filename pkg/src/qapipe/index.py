"""Inverted index with BM25 ranking and collection idf statistics.

The index is immutable once built; queries may run concurrently. Persistence
is a directory with a postings file, a document-stats file, and a manifest.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .text import TOKENIZER_VERSION, tokenize

DEFAULT_K1 = 0.9
DEFAULT_B = 0.4

IdfSource = Callable[[str], float]


@dataclass(frozen=True)
class ScoredDocument:
    doc_id: str
    score: float
    rank: int


def smoothed_idf(n_docs: int, df: int) -> float:
    """ln(1 + (N - df + 0.5) / (df + 0.5)); unseen terms use df = 0."""
    return math.log(1.0 + (n_docs - df + 0.5) / (df + 0.5))


class InvertedIndex:
    def __init__(self, postings: dict[str, list[tuple[str, int]]],
                 doc_lengths: dict[str, int], k1: float = DEFAULT_K1,
                 b: float = DEFAULT_B):
        if not doc_lengths:
            raise ValueError("empty collection")
        self.postings = postings
        self.doc_lengths = doc_lengths
        self.N = len(doc_lengths)
        self.avgdl = sum(doc_lengths.values()) / self.N
        self.k1 = k1
        self.b = b

    def df(self, term: str) -> int:
        return len(self.postings.get(term, ()))

    def idf(self, term: str) -> float:
        return smoothed_idf(self.N, self.df(term))

    def bm25_term_weight(self, tf: int, doc_len: int) -> float:
        norm = self.k1 * (1.0 - self.b + self.b * doc_len / self.avgdl)
        return tf * (self.k1 + 1.0) / (tf + norm)

    def score_document(self, query_tokens: Sequence[str], doc_id: str) -> float:
        """BM25 score of one document; exists for audits and brute-force checks."""
        tf_by_term: dict[str, int] = {}
        for term in query_tokens:
            if term not in tf_by_term:
                for d, tf in self.postings.get(term, ()):
                    if d == doc_id:
                        tf_by_term[term] = tf
                        break
                else:
                    tf_by_term[term] = 0
        dl = self.doc_lengths[doc_id]
        score = 0.0
        for term in query_tokens:  # repeated query terms contribute repeatedly
            tf = tf_by_term[term]
            if tf > 0:
                score += self.idf(term) * self.bm25_term_weight(tf, dl)
        return score

    def retrieve(self, query_tokens: Sequence[str], h: int) -> list[ScoredDocument]:
        """Top-h documents by BM25; ties broken by doc_id ascending.

        Documents sharing no term with the query are never scored, so a
        query with no indexed terms returns an empty list.
        """
        if h < 1:
            raise ValueError("h must be >= 1")
        qtf: dict[str, int] = {}
        for t in query_tokens:
            qtf[t] = qtf.get(t, 0) + 1
        accum: dict[str, float] = {}
        for term, count in qtf.items():
            plist = self.postings.get(term)
            if not plist:
                continue
            idf = self.idf(term)
            for doc_id, tf in plist:
                w = count * idf * self.bm25_term_weight(tf, self.doc_lengths[doc_id])
                accum[doc_id] = accum.get(doc_id, 0.0) + w
        ranked = sorted(accum.items(), key=lambda kv: (-kv[1], kv[0]))[:h]
        return [ScoredDocument(doc_id, score, rank)
                for rank, (doc_id, score) in enumerate(ranked, 1)]

    # -- persistence --------------------------------------------------------

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / "postings.jsonl", "w", encoding="utf-8") as f:
            for term in sorted(self.postings):
                f.write(json.dumps({"t": term, "p": self.postings[term]},
                                   ensure_ascii=False) + "\n")
        with open(directory / "docstats.txt", "w", encoding="utf-8") as f:
            for doc_id in sorted(self.doc_lengths):
                f.write(f"{doc_id}\t{self.doc_lengths[doc_id]}\n")
        with open(directory / "manifest.txt", "w", encoding="utf-8") as f:
            f.write(f"format_version=1\n")
            f.write(f"tokenizer_version={TOKENIZER_VERSION}\n")
            f.write(f"k1={self.k1!r}\n")
            f.write(f"b={self.b!r}\n")
            f.write(f"n_docs={self.N}\n")

    @classmethod
    def load(cls, directory) -> "InvertedIndex":
        directory = Path(directory)
        manifest = read_manifest(directory / "manifest.txt")
        if manifest.get("tokenizer_version") != TOKENIZER_VERSION:
            raise ValueError(f"index built with tokenizer version "
                             f"{manifest.get('tokenizer_version')}, "
                             f"current is {TOKENIZER_VERSION}")
        postings: dict[str, list[tuple[str, int]]] = {}
        with open(directory / "postings.jsonl", encoding="utf-8") as f:
            for line in f:
                rec = json.loads(line)
                postings[rec["t"]] = [(d, tf) for d, tf in rec["p"]]
        doc_lengths: dict[str, int] = {}
        with open(directory / "docstats.txt", encoding="utf-8") as f:
            for line in f:
                doc_id, length = line.rstrip("\n").split("\t")
                doc_lengths[doc_id] = int(length)
        index = cls(postings, doc_lengths,
                    k1=float(manifest["k1"]), b=float(manifest["b"]))
        if index.N != int(manifest["n_docs"]):
            raise ValueError("manifest document count does not match docstats")
        return index


def read_manifest(path) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line and "=" in line:
                k, v = line.split("=", 1)
                out[k] = v
    return out


def build_index(documents: Iterable[tuple[str, str]], k1: float = DEFAULT_K1,
                b: float = DEFAULT_B) -> InvertedIndex:
    """Index a stream of (doc_id, text); doc_ids must be unique."""
    postings: dict[str, dict[str, int]] = {}
    doc_lengths: dict[str, int] = {}
    for doc_id, text in documents:
        if doc_id in doc_lengths:
            raise ValueError(f"duplicate doc_id: {doc_id}")
        tokens = tokenize(text)
        doc_lengths[doc_id] = len(tokens)
        counts: dict[str, int] = {}
        for t in tokens:
            counts[t] = counts.get(t, 0) + 1
        for t, tf in counts.items():
            postings.setdefault(t, {})[doc_id] = tf
    sorted_postings = {
        term: sorted(by_doc.items()) for term, by_doc in postings.items()
    }
    return InvertedIndex(sorted_postings, doc_lengths, k1=k1, b=b)


def corpus_idf(token_sets: Iterable[Iterable[str]]) -> IdfSource:
    """Idf over an arbitrary corpus of token bags (e.g. candidate sentences).

    Used when evaluating dataset-only answer selection, where no document
    collection exists: N is the number of bags, df the number of bags
    containing a term, and the smoothing matches the document index.
    """
    df: dict[str, int] = {}
    n = 0
    for bag in token_sets:
        n += 1
        for t in set(bag):
            df[t] = df.get(t, 0) + 1
    if n == 0:
        raise ValueError("empty corpus")

    def idf(term: str) -> float:
        return smoothed_idf(n, df.get(term, 0))

    return idf
