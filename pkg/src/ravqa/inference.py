"""Answer production: joint answer/document decoding and the closed-book path."""
from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np

from .dataio import Corpus, Document, FullQuery
from .encoder import DualEncoderParams, encode
from .generator import AnswerScorerParams, best_answer
from .index import EmbeddingIndex, RetrievalResult, top_k


class JointDecode(NamedTuple):
    answer: str
    doc_id: str
    joint_prob: float


def decode_retrieved(gen: AnswerScorerParams, query: FullQuery, docs: Sequence[Document],
                     retrieval: RetrievalResult) -> JointDecode:
    """Pick the (document, answer) pair maximizing p(y|x,z) * p(z|x).

    Taking the best answer per document is enough for the global argmax.
    Ties go to the smaller doc_id, then the lexicographically smaller answer.
    """
    best = None
    for z, s, lpz in zip(docs, retrieval.scores, retrieval.log_probs):
        ans, lpy = best_answer(gen, query, z, float(s))
        key = (-(lpy + lpz), z.doc_id, ans)
        if best is None or key < best:
            best = key
    neg_lp, doc_id, ans = best
    return JointDecode(ans, doc_id, float(np.exp(-neg_lp)))


def retrieve(enc: DualEncoderParams, index: EmbeddingIndex, query: FullQuery,
             k: int) -> RetrievalResult:
    return top_k(index, encode(enc, "query", query.norm_tokens), k)


def decode_joint(enc: DualEncoderParams, gen: AnswerScorerParams, index: EmbeddingIndex,
                 corpus: Corpus, query: FullQuery, k_test: int) -> JointDecode:
    if len(index) == 0:
        raise ValueError("index is empty")
    ret = retrieve(enc, index, query, k_test)
    return decode_retrieved(gen, query, [corpus[d] for d in ret.doc_ids], ret)


def decode_closed_book(gen: AnswerScorerParams, query: FullQuery) -> str:
    """Best answer from the query features alone (no document, zero relevance features)."""
    return best_answer(gen, query, None)[0]
