"""Retrieval-augmented knowledge QA: joint training of a dense retriever and a
closed-vocabulary answer model, with the matching metrics."""

__version__ = "0.1.0"
