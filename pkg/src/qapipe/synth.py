"""Deterministic synthetic QA world for desk-scale end-to-end runs.

Generates a small document collection with planted answer sentences, the
matching questions, and dataset-style annotations (positive and negative
candidate sentences per question). Planted collection sentences are either
verbatim copies of an annotated sentence or prefixed variants whose
token-set Jaccard against the annotation stays above the 0.7 transfer
threshold, mirroring how real collection sentences differ from dataset
candidates.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field

from .dataio import DatasetSplit, QAPair
from .text import sentence

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


def _word(rng: random.Random, syllables: int) -> str:
    return "".join(
        rng.choice(_CONSONANTS) + rng.choice(_VOWELS)
        for _ in range(syllables)
    )


def _vocabulary(rng: random.Random, count: int) -> list[str]:
    words: list[str] = []
    seen = set()
    while len(words) < count:
        w = _word(rng, rng.choice((2, 3)))
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


@dataclass
class SynthWorld:
    corpus: list[tuple[str, str]]          # (doc_id, text)
    questions: list[tuple[str, str]]       # (qid, question text)
    dataset: DatasetSplit                  # annotated candidates per question
    answer_doc_ids: dict[str, list[str]] = field(default_factory=dict)
    seed: int = 0

    def doc_texts(self) -> dict[str, str]:
        return dict(self.corpus)

    def embedding_table(self, dim: int = 16):
        """Seeded random embeddings covering every token in the world."""
        import numpy as np

        from .dataio import EmbeddingTable
        from .text import tokenize

        tokens = set()
        for _, text in self.corpus:
            tokens.update(tokenize(text))
        for _, text in self.questions:
            tokens.update(tokenize(text))
        for pair in self.dataset.pairs:
            tokens.update(pair.question.tokens)
            tokens.update(pair.candidate.tokens)
        rng = np.random.default_rng(self.seed + 1)
        vectors = {
            tok: rng.uniform(-0.25, 0.25, dim).astype(np.float32)
            for tok in sorted(tokens)
        }
        return EmbeddingTable(dim=dim, vectors=vectors, seed=self.seed)

    def train_dev_split(self, dev_fraction: float = 0.2,
                        ) -> tuple[DatasetSplit, DatasetSplit]:
        groups = self.dataset.groups()
        n_dev = max(1, int(len(groups) * dev_fraction))
        train = DatasetSplit(name="synthetic-train")
        dev = DatasetSplit(name="synthetic-dev")
        for i, (_, pairs) in enumerate(groups):
            target = dev if i >= len(groups) - n_dev else train
            target.pairs.extend(pairs)
        return train, dev


def synthetic_world(seed: int = 0, n_questions: int = 20,
                    n_docs: int = 200) -> SynthWorld:
    """Build the world; fully determined by (seed, n_questions, n_docs)."""
    rng = random.Random(seed)
    vocab = _vocabulary(rng, 4 * n_questions + 80)
    topic_words = vocab[: 4 * n_questions]
    filler = vocab[4 * n_questions:]

    def filler_sentence() -> str:
        a, b, c = rng.sample(filler, 3)
        pattern = rng.choice([
            "The {0} {1} moved near the {2}.",
            "A {0} was seen by the {1} at the {2}.",
            "Several {0} kept the {1} from the {2}.",
        ])
        return pattern.format(a, b, c)

    corpus: list[tuple[str, str]] = []
    questions: list[tuple[str, str]] = []
    dataset = DatasetSplit(name="synthetic")
    answer_docs: dict[str, list[str]] = {}
    doc_counter = 0

    def add_doc(sentences: list[str]) -> str:
        nonlocal doc_counter
        doc_id = f"synd{doc_counter:03d}"
        doc_counter += 1
        corpus.append((doc_id, " ".join(sentences)))
        return doc_id

    for i in range(n_questions):
        t0, t1, t2, answer = topic_words[4 * i: 4 * i + 4]
        qid = f"synq{i:02d}"
        question_text = f"what is the {t0} {t1} of {t2}"
        questions.append((qid, question_text))
        q_sent = sentence(question_text)

        positive_a = f"The {t0} {t1} of {t2} is {answer}."
        positive_b = f"The {t0} {t1} of {t2} remains {answer} today."
        d0, d1 = rng.sample(filler, 2)
        other = rng.choice(filler)
        negatives = [
            f"The {d0} {d1} of {t2} is {other}.",
            f"Many experts discussed the {t0} situation.",
            f"A report on {t1} was filed by the {d1}.",
            filler_sentence(),
            filler_sentence(),
            filler_sentence(),
        ]
        for text, label in [(positive_a, 1), (positive_b, 1)] + [
                (n, 0) for n in negatives]:
            dataset.pairs.append(QAPair(qid, q_sent, sentence(text), label))

        # doc with prefixed near-duplicates of both positives (jaccard 7/9, 8/10)
        variant_a = f"Reports say the {t0} {t1} of {t2} is {answer}."
        variant_b = f"Reports say the {t0} {t1} of {t2} remains {answer} today."
        doc_a = add_doc([variant_a, negatives[1], filler_sentence()])
        # doc with the verbatim positive (jaccard 1.0)
        doc_b = add_doc([filler_sentence(), positive_a, variant_b])
        # distractor doc: one annotated negative plus an unannotated sentence
        # sharing two topic words, so retrieval surfaces unjudged material
        unannotated = f"The {t0} {t1} committee met without conclusions."
        doc_c = add_doc([negatives[0], unannotated, filler_sentence()])
        answer_docs[qid] = [doc_a, doc_b]

    while doc_counter < n_docs:
        add_doc([filler_sentence() for _ in range(rng.randint(2, 5))])

    return SynthWorld(corpus=corpus, questions=questions, dataset=dataset,
                      answer_doc_ids=answer_docs, seed=seed)
