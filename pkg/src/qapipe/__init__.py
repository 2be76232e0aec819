"""End-to-end factoid question answering over a document collection.

BM25 document retrieval, sentence segmentation, word-overlap and
convolutional rerankers, evaluation under sparse judgments, and blinded
side-by-side human assessment.
"""

__version__ = "0.1.0"
