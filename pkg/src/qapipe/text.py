"""Tokenization, sentence segmentation, stopwords, and set similarity.

Everything downstream (indexing, reranking, judgment transfer) shares the
normalization defined here, so any change to these rules invalidates stored
indexes and transferred judgments.
"""
from __future__ import annotations

import importlib.resources
from dataclasses import dataclass
from typing import FrozenSet, Iterable, Optional

TOKENIZER_VERSION = "1"

# Stripped from token edges; internal punctuation (hyphens, apostrophes) kept.
_PUNCT = "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~" + "‘’“”–—…"

# Sentence-final punctuation never splits after these (lowercased, no dot).
ABBREVIATIONS = frozenset([
    "dr", "mr", "mrs", "ms", "prof", "rev", "hon", "st", "sr", "jr",
    "gen", "col", "sgt", "capt", "lt", "cmdr", "adm", "maj",
    "vs", "etc", "eg", "e.g", "ie", "i.e", "cf", "al", "inc", "co", "corp",
    "ltd", "dept", "univ", "assn", "bros", "ph.d", "m.d", "b.a", "m.a",
    "mt", "ft", "fig", "no", "vol", "pp", "ed", "eds", "repr", "trans",
    "jan", "feb", "mar", "apr", "jun", "jul", "aug", "sep", "sept", "oct",
    "nov", "dec", "u.s", "u.k", "u.n",
])

_CLOSERS = "\"')]’”"


@dataclass(frozen=True)
class Sentence:
    """A normalized token sequence plus the raw text it came from."""

    tokens: tuple[str, ...]
    raw: str
    doc_id: Optional[str] = None
    position: int = 0

    @property
    def key(self) -> str:
        """Stable join key: 'docid#position' when document-sourced."""
        if self.doc_id is not None:
            return f"{self.doc_id}#{self.position}"
        return f"s{self.position}"

    def token_set(self) -> frozenset[str]:
        return frozenset(self.tokens)


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, strip edge punctuation.

    Pure punctuation pieces are dropped; empty input yields an empty list.
    Deterministic: tokenize(" ".join(tokenize(t))) == tokenize(t).
    """
    tokens = []
    for piece in text.lower().split():
        tok = piece.strip(_PUNCT)
        if tok:
            tokens.append(tok)
    return tokens


def sentence(text: str, doc_id: Optional[str] = None, position: int = 0) -> Sentence:
    """Build a Sentence whose tokens are tokenize(text)."""
    return Sentence(tokens=tuple(tokenize(text)), raw=text, doc_id=doc_id, position=position)


def _is_abbreviation(word: str) -> bool:
    raw = word.rstrip(".")
    w = raw.lower()
    if not w:
        return False
    if w in ABBREVIATIONS:
        return True
    # single-letter initials ("J. Smith"; uppercase only) and dotted acronyms
    if len(raw) == 1 and raw.isalpha() and raw.isupper():
        return True
    if "." in w and all(len(p) <= 1 for p in w.split(".")):
        return True
    return False


def segment_sentences(document_text: str, doc_id: Optional[str] = None) -> list[Sentence]:
    """Split a document into sentences on terminal [.?!] plus closing quotes.

    Rule-based: a terminal mark ends a sentence unless the preceding word is
    in ABBREVIATIONS (or looks like an initial) and the mark is a period.
    Text with no boundary comes back as a single sentence. Spans that
    tokenize to nothing (pure punctuation) are dropped; token content of the
    document is preserved across the returned sentences.
    """
    spans: list[str] = []
    n = len(document_text)
    start = 0
    i = 0
    while i < n:
        ch = document_text[i]
        if ch in ".?!":
            # absorb runs of terminal marks and closing quotes/brackets
            j = i + 1
            while j < n and document_text[j] in ".?!" + _CLOSERS:
                j += 1
            if ch == "." and (j >= n or document_text[i + 1 : j].strip() == ""):
                # abbreviation guard applies to simple periods only
                prev = document_text[start:i].split()
                if prev and _is_abbreviation(prev[-1] + "."):
                    # also require the next word to start a new sentence;
                    # "Dr. Smith" continues, "won. He" splits regardless
                    i = j
                    continue
            # boundary confirmed if at end or followed by whitespace
            if j >= n or document_text[j].isspace():
                spans.append(document_text[start:j])
                start = j
                i = j
                continue
        i += 1
    if start < n:
        spans.append(document_text[start:])

    sentences = []
    for span in spans:
        raw = span.strip()
        if not raw:
            continue
        toks = tokenize(raw)
        if not toks:
            continue
        sentences.append(
            Sentence(tokens=tuple(toks), raw=raw, doc_id=doc_id, position=len(sentences))
        )
    return sentences


def load_stopwords(path) -> frozenset[str]:
    """Read a stopword file: one token per line, '#' comments, UTF-8."""
    words = set()
    with open(path, encoding="utf-8") as f:
        for line in f:
            word = line.split("#", 1)[0].strip().lower()
            if word:
                words.add(word)
    return frozenset(words)


def default_stopwords() -> frozenset[str]:
    """The stopword list shipped with the package (versioned configuration)."""
    ref = importlib.resources.files("qapipe").joinpath("stopwords.txt")
    words = set()
    for line in ref.read_text(encoding="utf-8").splitlines():
        word = line.split("#", 1)[0].strip().lower()
        if word:
            words.add(word)
    return frozenset(words)


def remove_stopwords(tokens: Iterable[str], stopwords: FrozenSet[str]) -> list[str]:
    """Order-preserving stopword filter; the input is not modified."""
    return [t for t in tokens if t not in stopwords]


def jaccard(a: Iterable[str], b: Iterable[str]) -> float:
    """|a ∩ b| / |a ∪ b| over token sets; 1.0 when both sets are empty."""
    sa, sb = set(a), set(b)
    if not sa and not sb:
        return 1.0
    union = len(sa | sb)
    return len(sa & sb) / union
