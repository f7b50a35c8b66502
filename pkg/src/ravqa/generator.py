"""Closed-vocabulary answer model p(y | x, z).

The document-conditioned answer distribution is a softmax over a fixed answer
vocabulary. The logit of candidate ``a`` is

    W[a, :h] . mean(E[x tokens + z tokens]) + W[a, h] * score + W[a, h+1] * overlap_a + b[a]

where ``score`` is the retrieval score of ``z`` and ``overlap_a`` counts the
occurrences of candidate ``a`` in ``z`` (token-boundary match). The overlap
column is what lets the model copy an answer out of a document.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .dataio import Document, FullQuery, QueryExample, normalize_answer
from .encoder import token_ids
from .numerics import check_finite, log_softmax, read_arrays, write_arrays

N_RELEVANCE_FEATURES = 2


class OutOfVocabularyError(KeyError):
    """A training target is not in the answer vocabulary."""


class AnswerVocab:
    def __init__(self, answers: Iterable[str]):
        self.answers: tuple[str, ...] = tuple(sorted(set(answers)))
        self._index = {a: i for i, a in enumerate(self.answers)}
        self._by_first: dict[str, list[tuple[int, tuple[str, ...]]]] = {}
        for i, a in enumerate(self.answers):
            toks = tuple(a.split())
            if toks:
                self._by_first.setdefault(toks[0], []).append((i, toks))
        self._occ_cache: dict[tuple[str, ...], tuple[np.ndarray, np.ndarray]] = {}

    @classmethod
    def from_examples(cls, examples: Iterable[QueryExample]) -> "AnswerVocab":
        """All answers annotated on training-split examples."""
        return cls(a for ex in examples if ex.split == "train" for a in ex.answers.answers)

    def __len__(self) -> int:
        return len(self.answers)

    def __contains__(self, answer: str) -> bool:
        return normalize_answer(answer) in self._index

    def index(self, answer: str) -> int:
        try:
            return self._index[normalize_answer(answer)]
        except KeyError:
            raise OutOfVocabularyError(f"answer {answer!r} is not in the vocabulary") from None

    def occurrences(self, tokens: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
        """Sparse (answer indices, counts) of vocabulary answers occurring in ``tokens``."""
        tokens = tuple(tokens)
        hit = self._occ_cache.get(tokens)
        if hit is None:
            counts: dict[int, int] = {}
            for pos, tok in enumerate(tokens):
                for idx, ans_toks in self._by_first.get(tok, ()):
                    if tokens[pos: pos + len(ans_toks)] == ans_toks:
                        counts[idx] = counts.get(idx, 0) + 1
            keys = sorted(counts)
            hit = (np.array(keys, dtype=np.intp), np.array([counts[k] for k in keys], dtype=float))
            if len(self._occ_cache) < 1 << 16:
                self._occ_cache[tokens] = hit
        return hit

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.writelines(a + "\n" for a in self.answers)

    @classmethod
    def load(cls, path) -> "AnswerVocab":
        with open(path, encoding="utf-8") as f:
            return cls(line.rstrip("\n") for line in f if line.strip())


@dataclass
class AnswerScorerParams:
    """``feature_embedding`` (V x h_g), ``output`` (|V_a| x (h_g + 2)), ``output_bias``."""

    arrays: dict[str, np.ndarray]
    vocab: AnswerVocab
    seed: int = 0

    def __post_init__(self):
        if len(self.vocab) == 0:
            raise ValueError("answer vocabulary is empty")
        _, h = self.arrays["feature_embedding"].shape
        if self.arrays["output"].shape != (len(self.vocab), h + N_RELEVANCE_FEATURES):
            raise ValueError("output matrix shape does not match vocab/feature sizes")
        if self.arrays["output_bias"].shape != (len(self.vocab),):
            raise ValueError("output bias shape does not match vocab size")
        check_finite("answer scorer parameters", *self.arrays.values())

    @property
    def vocab_size(self) -> int:
        return self.arrays["feature_embedding"].shape[0]

    @property
    def dim(self) -> int:
        return self.arrays["feature_embedding"].shape[1]

    def copy(self) -> "AnswerScorerParams":
        return AnswerScorerParams({k: v.copy() for k, v in self.arrays.items()},
                                  self.vocab, self.seed)

    def save(self, path) -> None:
        meta = {"kind": "answer_scorer", "seed": self.seed, "answers": list(self.vocab.answers)}
        write_arrays(path, meta, self.arrays)

    @classmethod
    def load(cls, path) -> "AnswerScorerParams":
        meta, arrays = read_arrays(path)
        if meta.get("kind") != "answer_scorer":
            raise ValueError(f"{path}: not an answer scorer checkpoint")
        return cls(arrays, AnswerVocab(meta["answers"]), int(meta["seed"]))


def init_answer_scorer(vocab: AnswerVocab, vocab_size: int = 4096, dim: int = 64,
                       seed: int = 0, copy_init: float = 1.0) -> AnswerScorerParams:
    """Random embedding and output weights; every candidate's overlap weight
    starts at ``copy_init`` so answers never seen as targets can still be
    copied from a document."""
    rng = np.random.default_rng(seed)
    n_in = dim + N_RELEVANCE_FEATURES
    bound = 1.0 / np.sqrt(n_in)
    arrays = {
        "feature_embedding": rng.uniform(-0.1, 0.1, size=(vocab_size, dim)),
        "output": rng.uniform(-bound, bound, size=(len(vocab), n_in)),
        "output_bias": np.zeros(len(vocab)),
    }
    arrays["output"][:, -1] = copy_init
    return AnswerScorerParams(arrays, vocab, seed)


def _tokens(x: FullQuery | Sequence[str]) -> Sequence[str]:
    return x.norm_tokens if isinstance(x, FullQuery) else x


def features(params: AnswerScorerParams, x: FullQuery, z: Document | None,
             score: float = 0.0):
    """Shared feature vector ``[mean embedding, score]``, the hashed ids behind
    the embedding part, and the dense per-candidate overlap counts.

    ``z=None`` is the closed-book case: no document tokens, zero score and
    zero overlaps.
    """
    xt = _tokens(x)
    zt = () if z is None else z.norm_tokens
    ids = token_ids((*xt, *zt), params.vocab_size)
    f = np.zeros(params.dim + 1)
    if len(ids):
        f[: params.dim] = params.arrays["feature_embedding"][ids].mean(axis=0)
    overlap = np.zeros(len(params.vocab))
    if z is not None:
        f[params.dim] = score
        idx, counts = params.vocab.occurrences(zt)
        overlap[idx] = counts
    return f, ids, overlap


def answer_logits(params: AnswerScorerParams, x: FullQuery, z: Document | None,
                  score: float = 0.0) -> np.ndarray:
    f, _, overlap = features(params, x, z, score)
    W = params.arrays["output"]
    return W[:, :-1] @ f + W[:, -1] * overlap + params.arrays["output_bias"]


def answer_log_probs(params: AnswerScorerParams, x: FullQuery, z: Document | None,
                     score: float = 0.0) -> np.ndarray:
    return log_softmax(answer_logits(params, x, z, score))


def best_answer(params: AnswerScorerParams, x: FullQuery, z: Document | None,
                score: float = 0.0) -> tuple[str, float]:
    """Argmax answer and its log-probability (first in vocab order on ties)."""
    lp = answer_log_probs(params, x, z, score)
    i = int(np.argmax(lp))
    return params.vocab.answers[i], float(lp[i])


def target_log_prob(params: AnswerScorerParams, x: FullQuery, z: Document | None,
                    target: str, score: float = 0.0) -> float:
    return float(answer_log_probs(params, x, z, score)[params.vocab.index(target)])


def target_log_prob_grad(params: AnswerScorerParams, x: FullQuery, z: Document | None,
                         target: str, score: float = 0.0, weight: float = 1.0,
                         grads: dict[str, np.ndarray] | None = None):
    """``log p(target | x, z)`` with its gradient.

    Accumulates ``weight * d log p / d params`` into ``grads`` and returns
    ``(log_prob, weight * d log p / d score)``; the second value lets callers
    push the gradient through the retrieval score into the query encoder.
    """
    t = params.vocab.index(target)
    f, ids, overlap = features(params, x, z, score)
    W = params.arrays["output"]
    lp = log_softmax(W[:, :-1] @ f + W[:, -1] * overlap + params.arrays["output_bias"])
    d_logits = -np.exp(lp)
    d_logits[t] += 1.0
    d_logits *= weight
    d_f = W[:, :-1].T @ d_logits
    if grads is not None:
        grads["output"][:, :-1] += np.outer(d_logits, f)
        grads["output"][:, -1] += d_logits * overlap
        grads["output_bias"] += d_logits
        if len(ids):
            np.add.at(grads["feature_embedding"], ids, d_f[: params.dim] / len(ids))
    d_score = float(d_f[params.dim]) if z is not None else 0.0
    return float(lp[t]), d_score


def zero_grads(params: AnswerScorerParams) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.arrays.items()}
