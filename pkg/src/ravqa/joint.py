"""Joint retriever/answer-model losses and the fine-tuning loop.

All losses are per example and return gradients of the loss (not of the
log-likelihood) for the query encoder and the answer scorer. The answer
scorer sees each document's retrieval score as a feature, so generation
terms also send gradient into the query encoder through that score.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import generator as gen_mod
from .dataio import (AnswerSet, Corpus, Document, FullQuery, QueryExample, build_full_query,
                     customized_target, most_popular_answer, pseudo_relevance)
from .encoder import DualEncoderParams, encode_backward, encode_cached, zero_grads
from .generator import AnswerScorerParams, best_answer, target_log_prob_grad
from .index import EmbeddingIndex, top_k
from .numerics import check_finite, log_softmax, logsumexp
from .optim import Adam, linear_decay_lr

log = logging.getLogger(__name__)


class Variant(str, enum.Enum):
    RA_VQA = "RA-VQA"
    RA_VQA_NoPR = "RA-VQA-NoPR"
    RA_VQA_NoCT = "RA-VQA-NoCT"
    RA_VQA_FrDPR = "RA-VQA-FrDPR"
    RA_VQA_NoDPR = "RA-VQA-NoDPR"
    RAG = "RAG"

    @classmethod
    def parse(cls, name: str) -> "Variant":
        key = name.strip().lower().replace("_", "-")
        for v in cls:
            if v.value.lower() == key or v.name.lower().replace("_", "-") == key:
                return v
        aliases = {"ravqa": cls.RA_VQA, "nopr": cls.RA_VQA_NoPR, "noct": cls.RA_VQA_NoCT,
                   "frdpr": cls.RA_VQA_FrDPR, "nodpr": cls.RA_VQA_NoDPR}
        if key in aliases:
            return aliases[key]
        raise ValueError(f"unknown variant {name!r}; expected one of {[v.value for v in cls]}")

    @property
    def uses_retrieval(self) -> bool:
        return self is not Variant.RA_VQA_NoDPR

    @property
    def trains_retriever(self) -> bool:
        return self not in (Variant.RA_VQA_FrDPR, Variant.RA_VQA_NoDPR)


@dataclass(frozen=True)
class DocPartition:
    """Indices (0-based, into the retrieved list) whose scores are pushed up or down."""

    p_plus: frozenset[int]
    p_minus: frozenset[int]
    k: int

    def __post_init__(self):
        assert not (self.p_plus & self.p_minus), "P+ and P- overlap"
        assert all(0 <= i < self.k for i in self.p_plus | self.p_minus)


def partition(y: Sequence[str], targets: Sequence[str], h_flags: Sequence[int],
              variant: Variant = Variant.RA_VQA) -> DocPartition:
    if not len(y) == len(targets) == len(h_flags):
        raise ValueError("y, targets and h_flags must have the same length")
    correct = [a == t for a, t in zip(y, targets)]
    if variant is Variant.RA_VQA_NoPR:
        plus = {k for k, c in enumerate(correct) if c}
        minus = {k for k, c in enumerate(correct) if not c}
    else:
        plus = {k for k, c in enumerate(correct) if c and h_flags[k] == 1}
        minus = {k for k, c in enumerate(correct) if not c and h_flags[k] == 0}
    return DocPartition(frozenset(plus), frozenset(minus), len(y))


@dataclass
class LossResult:
    loss: float
    enc_grad: dict[str, np.ndarray]
    gen_grad: dict[str, np.ndarray]
    diagnostics: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.loss, self.enc_grad, self.gen_grad, self.diagnostics))


def _query_scores(enc: DualEncoderParams, query: FullQuery, doc_vecs: np.ndarray):
    q, cache = encode_cached(enc, "query", query.norm_tokens)
    scores = doc_vecs @ q
    check_finite("retrieval scores", scores)
    return scores, cache


def _backprop_scores(enc, cache, doc_vecs, d_scores, grads):
    encode_backward(enc, "query", cache, doc_vecs.T @ d_scores, grads)


def ravqa_loss(enc: DualEncoderParams, gen: AnswerScorerParams, query: FullQuery,
               answers: AnswerSet, docs: Sequence[Document], doc_vecs: np.ndarray,
               variant: Variant = Variant.RA_VQA,
               part: DocPartition | None = None) -> LossResult:
    """Generation term over all retrieved documents plus the P+/P- retrieval terms.

    ``docs``/``doc_vecs`` are the retrieved documents and their (frozen)
    embeddings; scores and p(z|x) are recomputed from ``enc`` so the result is
    differentiable in the query encoder. ``part`` fixes the partition instead
    of recomputing it from the current answer scorer.
    """
    variant = Variant(variant)
    if variant in (Variant.RA_VQA_NoDPR, Variant.RAG):
        raise ValueError(f"ravqa_loss does not handle {variant.value}")
    doc_vecs = np.asarray(doc_vecs, dtype=np.float64)
    k = len(docs)
    if k < 1 or doc_vecs.shape[0] != k:
        raise ValueError("need K >= 1 documents with one vector each")
    scores, cache = _query_scores(enc, query, doc_vecs)
    log_p = log_softmax(scores)
    p = np.exp(log_p)

    if variant is Variant.RA_VQA_NoCT:
        targets = [most_popular_answer(answers)] * k
    else:
        targets = [customized_target(z, answers) for z in docs]
    gen_grad = gen_mod.zero_grads(gen)
    d_scores = np.zeros(k)
    gen_terms = np.empty(k)
    for i, (z, t) in enumerate(zip(docs, targets)):
        gen_terms[i], d_scores[i] = target_log_prob_grad(gen, query, z, t, scores[i], -1.0, gen_grad)

    h_flags = [pseudo_relevance(z, answers) for z in docs]
    if part is None:
        y = [best_answer(gen, query, z, scores[i])[0] for i, z in enumerate(docs)]
        part = partition(y, targets, h_flags, variant)
    else:
        y = None
    plus = np.array(sorted(part.p_plus), dtype=np.intp)
    minus = np.array(sorted(part.p_minus), dtype=np.intp)
    pos_term = float(log_p[plus].sum())
    neg_term = float(log_p[minus].sum())
    gen_term = float(gen_terms.sum())
    loss = -(gen_term + pos_term - neg_term)
    if not np.isfinite(loss):
        raise FloatingPointError("RA-VQA loss is not finite")

    # d/d scores of -(sum_{P+} log p_k - sum_{P-} log p_k)
    d_ret = -(np.bincount(plus, minlength=k) - len(plus) * p) \
        + (np.bincount(minus, minlength=k) - len(minus) * p)
    enc_grad = zero_grads(enc, ("query",))
    if variant.trains_retriever:
        _backprop_scores(enc, cache, doc_vecs, d_scores + d_ret, enc_grad)
    diag = {"gen_term": gen_term, "pos_term": pos_term, "neg_term": neg_term,
            "partition": part, "targets": targets, "predictions": y, "h_flags": h_flags,
            "scores": scores, "probs": p, "d_scores_retrieval": d_ret,
            "d_scores_generation": d_scores}
    return LossResult(loss, enc_grad, gen_grad, diag)


def rag_loss(enc: DualEncoderParams, gen: AnswerScorerParams, query: FullQuery,
             answers: AnswerSet, docs: Sequence[Document], doc_vecs: np.ndarray) -> LossResult:
    """Negative log of the most popular answer's probability marginalized over documents."""
    doc_vecs = np.asarray(doc_vecs, dtype=np.float64)
    k = len(docs)
    if k < 1 or doc_vecs.shape[0] != k:
        raise ValueError("need K >= 1 documents with one vector each")
    target = most_popular_answer(answers)
    scores, cache = _query_scores(enc, query, doc_vecs)
    log_p = log_softmax(scores)
    lp_gen = np.array([gen_mod.answer_log_probs(gen, query, z, scores[i])[gen.vocab.index(target)]
                       for i, z in enumerate(docs)])
    log_joint = lp_gen + log_p
    log_marginal = float(logsumexp(log_joint))
    if not np.isfinite(log_marginal):
        raise FloatingPointError("marginal answer probability is zero or not finite")
    post = np.exp(log_joint - log_marginal)

    gen_grad = gen_mod.zero_grads(gen)
    d_scores = np.zeros(k)
    for i, z in enumerate(docs):
        _, d_scores[i] = target_log_prob_grad(gen, query, z, target, scores[i], -post[i], gen_grad)
    d_ret = -(post - np.exp(log_p))
    enc_grad = zero_grads(enc, ("query",))
    _backprop_scores(enc, cache, doc_vecs, d_scores + d_ret, enc_grad)
    diag = {"log_marginal": log_marginal, "posterior": post, "probs": np.exp(log_p),
            "scores": scores, "target": target}
    return LossResult(-log_marginal, enc_grad, gen_grad, diag)


def closed_book_loss(gen: AnswerScorerParams, query: FullQuery, answers: AnswerSet) -> LossResult:
    """-log p(s* | x) with no document (the NoDPR objective)."""
    gen_grad = gen_mod.zero_grads(gen)
    lp, _ = target_log_prob_grad(gen, query, None, most_popular_answer(answers), 0.0, -1.0, gen_grad)
    return LossResult(-lp, {}, gen_grad, {"gen_term": lp})


@dataclass(frozen=True)
class JointConfig:
    variant: Variant = Variant.RA_VQA
    k_train: int = 5
    epochs: int = 10
    lr_retriever: float = 1e-5
    lr_generator: float = 6e-5
    batch_size: int = 8
    seed: int = 0

    def __post_init__(self):
        if not isinstance(self.variant, Variant):
            object.__setattr__(self, "variant", Variant.parse(self.variant))
        if self.k_train < 1:
            raise ValueError("k_train must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "JointConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


LOG_FIELDS = ("epoch", "step", "loss", "gen_term", "pos_term", "neg_term", "n_plus", "n_minus",
              "lr_retriever", "lr_generator")


def example_loss(variant: Variant, enc, gen, index: EmbeddingIndex, docs_by_row, query: FullQuery,
                 answers: AnswerSet, k: int) -> LossResult:
    """Retrieve with the live query encoder against the frozen index, then score."""
    if variant is Variant.RA_VQA_NoDPR:
        return closed_book_loss(gen, query, answers)
    qvec = encode_cached(enc, "query", query.norm_tokens)[0]
    ret = top_k(index, qvec, k)
    docs = [docs_by_row[r] for r in ret.rows]
    vecs = index.matrix[ret.rows]
    if variant is Variant.RAG:
        return rag_loss(enc, gen, query, answers, docs, vecs)
    return ravqa_loss(enc, gen, query, answers, docs, vecs, variant)


def train_joint(enc: DualEncoderParams | None, gen: AnswerScorerParams, corpus: Corpus | None,
                index: EmbeddingIndex | None, examples: Sequence[QueryExample],
                config: JointConfig = JointConfig()):
    """Fine-tune the query encoder and answer scorer.

    The document encoder and the index stay frozen. Learning rates decay
    linearly to zero over ``config.epochs``. Returns ``(enc, gen, log_rows)``
    with fresh parameter objects.
    """
    variant = config.variant
    if variant.uses_retrieval:
        if enc is None or index is None or corpus is None:
            raise ValueError(f"{variant.value} needs a pretrained encoder, corpus and index")
        index.validate(enc)
        enc = enc.copy()
        docs_by_row = [corpus[d] for d in index.doc_ids]
    else:
        enc = enc.copy() if enc is not None else None
        docs_by_row = []
    gen = gen.copy()
    train = [(build_full_query(e), e.answers) for e in examples if e.split == "train"]
    if not train:
        raise ValueError("no training examples")

    n_batches = -(-len(train) // config.batch_size)
    total_steps = n_batches * config.epochs
    lr_r = linear_decay_lr(config.lr_retriever, total_steps)
    lr_g = linear_decay_lr(config.lr_generator, total_steps)
    opt_g = Adam(gen.arrays, lr=config.lr_generator)
    opt_r = Adam(enc.query_arrays(), lr=config.lr_retriever) if variant.trains_retriever else None

    rng = np.random.default_rng(config.seed)
    rows = []
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(train))
        for b in range(n_batches):
            chunk = order[b * config.batch_size:(b + 1) * config.batch_size]
            g_enc = zero_grads(enc, ("query",)) if opt_r is not None else None
            g_gen = gen_mod.zero_grads(gen)
            acc = {"loss": 0.0, "gen_term": 0.0, "pos_term": 0.0, "neg_term": 0.0,
                   "n_plus": 0, "n_minus": 0}
            for i in chunk:
                query, answers = train[i]
                res = example_loss(variant, enc, gen, index, docs_by_row, query, answers,
                                   config.k_train)
                acc["loss"] += res.loss
                d = res.diagnostics
                acc["gen_term"] += d.get("gen_term", 0.0)
                acc["pos_term"] += d.get("pos_term", 0.0)
                acc["neg_term"] += d.get("neg_term", 0.0)
                if "partition" in d:
                    acc["n_plus"] += len(d["partition"].p_plus)
                    acc["n_minus"] += len(d["partition"].p_minus)
                for key, g in res.gen_grad.items():
                    g_gen[key] += g
                if g_enc is not None:
                    for key, g in res.enc_grad.items():
                        g_enc[key] += g
            rates = (lr_r(step), lr_g(step))
            if opt_r is not None:
                opt_r.step(g_enc, lr=rates[0])
            opt_g.step(g_gen, lr=rates[1])
            step += 1
            rows.append({"epoch": epoch + 1, "step": step, **acc,
                         "lr_retriever": rates[0] if opt_r is not None else 0.0,
                         "lr_generator": rates[1]})
        ep = [r for r in rows if r["epoch"] == epoch + 1]
        log.info("%s epoch %d mean loss %.4f", variant.value, epoch + 1,
                 sum(r["loss"] for r in ep) / len(train))
    return enc, gen, rows


def epoch_mean_losses(rows, n_examples: int) -> list[float]:
    """Per-epoch mean per-example loss from a training log."""
    epochs = sorted({r["epoch"] for r in rows})
    return [sum(r["loss"] for r in rows if r["epoch"] == e) / n_examples for e in epochs]
