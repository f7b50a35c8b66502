"""Precomputed document embeddings and exact maximum inner-product search."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import Corpus
from .encoder import DualEncoderParams, encode_many
from .numerics import log_softmax, read_arrays, write_arrays


class FingerprintMismatch(ValueError):
    """An index was built with a different document encoder than the one supplied."""


@dataclass(frozen=True)
class RetrievalResult:
    doc_ids: tuple[str, ...]
    rows: np.ndarray
    scores: np.ndarray
    log_probs: np.ndarray

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)

    @property
    def k(self) -> int:
        return len(self.doc_ids)

    @property
    def entries(self) -> list[tuple[str, float, float]]:
        return list(zip(self.doc_ids, self.scores.tolist(), self.probs.tolist()))


class EmbeddingIndex:
    def __init__(self, doc_ids, matrix: np.ndarray, encoder_fingerprint: str):
        self.doc_ids = tuple(doc_ids)
        self.matrix = np.asarray(matrix, dtype=np.float64)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != len(self.doc_ids):
            raise ValueError("index matrix must have one row per doc_id")
        if not self.doc_ids:
            raise ValueError("index is empty")
        self.encoder_fingerprint = encoder_fingerprint
        # position of each row in lexicographic doc_id order, for tie-breaks
        order = sorted(range(len(self.doc_ids)), key=self.doc_ids.__getitem__)
        self._id_rank = np.empty(len(order), dtype=np.intp)
        self._id_rank[order] = np.arange(len(order))
        self.matrix.setflags(write=False)

    def __len__(self) -> int:
        return len(self.doc_ids)

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def validate(self, params: DualEncoderParams) -> None:
        if params.doc_fingerprint() != self.encoder_fingerprint:
            raise FingerprintMismatch(
                "index was built with a different document encoder "
                f"({self.encoder_fingerprint[:12]} != {params.doc_fingerprint()[:12]})")

    def save(self, path) -> None:
        meta = {"kind": "index", "n_docs": len(self), "dim": self.dim,
                "fingerprint": self.encoder_fingerprint, "doc_ids": list(self.doc_ids)}
        write_arrays(path, meta, {"matrix": self.matrix})

    @classmethod
    def load(cls, path, params: DualEncoderParams | None = None) -> "EmbeddingIndex":
        meta, arrays = read_arrays(path)
        if meta.get("kind") != "index":
            raise ValueError(f"{path}: not an index file")
        index = cls(meta["doc_ids"], arrays["matrix"], meta["fingerprint"])
        if index.matrix.shape != (meta["n_docs"], meta["dim"]):
            raise ValueError(f"{path}: header does not match matrix shape")
        if params is not None:
            index.validate(params)
        return index


def build_index(corpus: Corpus, params: DualEncoderParams) -> EmbeddingIndex:
    """Encode every document once with the document encoder."""
    if len(corpus) == 0:
        raise ValueError("cannot index an empty corpus")
    matrix = encode_many(params, "doc", [d.norm_tokens for d in corpus])
    return EmbeddingIndex([d.doc_id for d in corpus], matrix, params.doc_fingerprint())


def top_k(index: EmbeddingIndex, query_vec: np.ndarray, k: int) -> RetrievalResult:
    """Exact top-k by inner product; ties go to the smaller doc_id.

    Probabilities are a softmax over the returned scores only, so they depend
    on ``k``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    query_vec = np.asarray(query_vec, dtype=np.float64)
    if query_vec.shape != (index.dim,):
        raise ValueError(f"query vector has shape {query_vec.shape}, expected ({index.dim},)")
    scores = index.matrix @ query_vec
    n = len(scores)
    k = min(k, n)
    if k < n:
        kth = np.partition(scores, n - k)[n - k]
        cand = np.flatnonzero(scores >= kth)
    else:
        cand = np.arange(n)
    order = np.lexsort((index._id_rank[cand], -scores[cand]))[:k]
    rows = cand[order]
    top = scores[rows]
    return RetrievalResult(tuple(index.doc_ids[r] for r in rows), rows, top, log_softmax(top))
