"""Weakly supervised retriever pretraining with in-batch negatives."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataio import Corpus, Document, FullQuery, QueryExample, build_full_query
from .encoder import DualEncoderParams, encode_backward, encode_cached, zero_grads
from .numerics import check_finite, log_softmax, softmax
from .optim import Adam, constant_lr

log = logging.getLogger(__name__)


def select_positive(ex: QueryExample, corpus: Corpus) -> Document | None:
    """The pseudo-relevant document holding the most popular contained answer.

    Answers are tried in popularity order (ties lexicographic); among the
    documents containing the first answer that occurs anywhere, the smallest
    doc_id wins. ``None`` when no document contains any answer.
    """
    for answer, _ in ex.answers.by_popularity():
        docs = corpus.containing(answer)
        if docs:
            return min(docs, key=lambda d: d.doc_id)
    return None


@dataclass(frozen=True)
class DprBatch:
    queries: tuple[FullQuery, ...]
    positives: tuple[Document, ...]

    def __post_init__(self):
        if len(self.queries) != len(self.positives):
            raise ValueError("queries and positives differ in length")
        if len(self.queries) < 2:
            raise ValueError("a DPR batch needs at least 2 examples to have negatives")

    @property
    def batch_size(self) -> int:
        return len(self.queries)


def batch_scores(params: DualEncoderParams, batch: DprBatch) -> np.ndarray:
    """B x B score matrix; entry (i, j) scores query i against positive j."""
    q = np.stack([encode_cached(params, "query", x.norm_tokens)[0] for x in batch.queries])
    d = np.stack([encode_cached(params, "doc", z.norm_tokens)[0] for z in batch.positives])
    return q @ d.T


def dpr_loss(params: DualEncoderParams, batch: DprBatch, sides: Sequence[str] = ("query", "doc")):
    """Summed in-batch softmax cross-entropy and its gradient.

    Query i's negatives are the positives of every other example in the batch.
    Gradients are returned for the encoder ``sides`` requested.
    """
    q_out = [encode_cached(params, "query", x.norm_tokens) for x in batch.queries]
    d_out = [encode_cached(params, "doc", z.norm_tokens) for z in batch.positives]
    Q = np.stack([o for o, _ in q_out])
    D = np.stack([o for o, _ in d_out])
    S = Q @ D.T
    check_finite("DPR scores", S)
    idx = np.arange(batch.batch_size)
    loss = float(-log_softmax(S, axis=1)[idx, idx].sum())

    dS = softmax(S, axis=1)
    dS[idx, idx] -= 1.0
    grads = zero_grads(params, sides)
    if "query" in sides:
        dQ = dS @ D
        for i, (_, cache) in enumerate(q_out):
            encode_backward(params, "query", cache, dQ[i], grads)
    if "doc" in sides:
        dD = dS.T @ Q
        for j, (_, cache) in enumerate(d_out):
            encode_backward(params, "doc", cache, dD[j], grads)
    return loss, grads


@dataclass(frozen=True)
class PretrainConfig:
    batch_size: int = 16
    epochs: int = 6
    learning_rate: float = 1e-5
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "PretrainConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


def training_pairs(corpus: Corpus, examples: Sequence[QueryExample]):
    """(query, positive) pairs for examples that have a pseudo-relevant document."""
    pairs = []
    for ex in examples:
        pos = select_positive(ex, corpus)
        if pos is not None:
            pairs.append((build_full_query(ex), pos))
    return pairs


def mean_dpr_loss(params: DualEncoderParams, pairs, batch_size: int) -> float:
    """Per-example loss over consecutive batches (the last one merged if it has a single item)."""
    total = 0.0
    n = 0
    for chunk in _chunks(list(range(len(pairs))), batch_size):
        batch = DprBatch(tuple(pairs[i][0] for i in chunk), tuple(pairs[i][1] for i in chunk))
        total += dpr_loss(params, batch, sides=())[0]
        n += len(chunk)
    return total / n


def _chunks(items: list, size: int) -> list[list]:
    out = [items[i: i + size] for i in range(0, len(items), size)]
    if len(out) > 1 and len(out[-1]) < 2:
        out[-2].extend(out.pop())
    return out


def pretrain(params: DualEncoderParams, corpus: Corpus, examples: Sequence[QueryExample],
             config: PretrainConfig = PretrainConfig()):
    """Train both encoders with Adam at a constant learning rate.

    Returns ``(trained_params, log_rows)``; the input params are not modified.
    Examples without any pseudo-relevant document are skipped.
    """
    if config.batch_size < 2:
        raise ValueError("batch_size must be >= 2")
    pairs = training_pairs(corpus, [e for e in examples if e.split == "train"])
    if len(pairs) < 2:
        raise ValueError("pretraining needs at least 2 examples with a pseudo-relevant document")
    params = params.copy()
    opt = Adam(params.arrays, lr=config.learning_rate)
    schedule = constant_lr(config.learning_rate)
    rng = np.random.default_rng(config.seed)
    rows = []
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(pairs)).tolist()
        total = 0.0
        for chunk in _chunks(order, config.batch_size):
            batch = DprBatch(tuple(pairs[i][0] for i in chunk), tuple(pairs[i][1] for i in chunk))
            loss, grads = dpr_loss(params, batch)
            opt.step(grads, lr=schedule(step))
            step += 1
            total += loss
        rows.append({"epoch": epoch + 1, "steps": step, "mean_loss": total / len(pairs),
                     "n_examples": len(pairs)})
        log.info("pretrain epoch %d mean loss %.4f", epoch + 1, total / len(pairs))
    return params, rows
