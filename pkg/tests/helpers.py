"""Small random instances shared by the unit, oracle and acceptance tests."""
from __future__ import annotations

import numpy as np

from ravqa.dataio import AnswerSet, Document, FullQuery
from ravqa.dpr import DprBatch
from ravqa.encoder import init_dual_encoder
from ravqa.generator import AnswerVocab, init_answer_scorer

WORDS = tuple(f"w{i:02d}" for i in range(30))


def rand_text(rng, n: int) -> str:
    return " ".join(rng.choice(WORDS, size=n))


def rand_query(rng, n: int = 6) -> FullQuery:
    text = rand_text(rng, n)
    return FullQuery(text, tuple(text.split()))


def jitter(arrays: dict, rng, scale: float = 0.5) -> None:
    for a in arrays.values():
        a += rng.normal(0.0, scale, size=a.shape)


def rand_encoder(rng, vocab_size: int = 16, dim: int = 8, seed: int = 0):
    enc = init_dual_encoder(vocab_size, dim, seed=seed, tied=False)
    jitter(enc.arrays, rng)
    return enc


def rand_scorer(rng, n_answers: int = 12, vocab_size: int = 16, dim: int = 8, seed: int = 0):
    gen = init_answer_scorer(AnswerVocab(WORDS[:n_answers]), vocab_size, dim, seed=seed)
    jitter(gen.arrays, rng)
    return gen


def rand_docs(rng, k: int, prefix: str = "d", n_tokens: int = 5) -> list[Document]:
    return [Document(f"{prefix}{i:03d}", rand_text(rng, n_tokens)) for i in range(k)]


def rand_answers(rng, n_answers: int = 12) -> AnswerSet:
    a, b = rng.choice(n_answers, size=2, replace=False)
    return AnswerSet(((WORDS[a], int(rng.integers(2, 6))), (WORDS[b], 1)))


def rand_batch(rng, b: int = 4) -> DprBatch:
    return DprBatch(tuple(rand_query(rng) for _ in range(b)),
                    tuple(rand_docs(rng, b, prefix="p")))


def rand_joint_instance(seed: int, k: int = 3, h: int = 8, h_g: int = 8, n_answers: int = 12,
                        vocab_size: int = 16):
    """(enc, gen, query, answers, docs, doc_vecs) with random parameters."""
    rng = np.random.default_rng(seed)
    enc = rand_encoder(rng, vocab_size, h, seed)
    gen = rand_scorer(rng, n_answers, vocab_size, h_g, seed)
    query = rand_query(rng)
    answers = rand_answers(rng, n_answers)
    docs = rand_docs(rng, k)
    vecs = rng.normal(0.0, 1.0, size=(k, h))
    return enc, gen, query, answers, docs, vecs


def mixed_partition_instance(seed: int, k: int = 3):
    """An instance whose natural RA-VQA partition has nonempty P+ and P-.

    Document 0 holds only the minority answer (target = that answer, H = 1),
    document 1 holds no answer (target = the majority answer, H = 0). A large
    bias makes the scorer predict the minority answer everywhere, so
    document 0 lands in P+ and document 1 in P-. Remaining documents and all
    other parameters are random.
    """
    rng = np.random.default_rng(seed)
    h = 8
    enc = rand_encoder(rng, 16, h, seed)
    gen = rand_scorer(rng, 12, 16, 8, seed)
    major, minor = (WORDS[i] for i in rng.choice(12, size=2, replace=False))
    answers = AnswerSet(((major, 3), (minor, 1)))
    others = [w for w in WORDS if w not in (major, minor)]
    filler = lambda n: " ".join(rng.choice(others, size=n))  # noqa: E731
    docs = [Document("d000", f"{filler(2)} {minor} {filler(2)}"),
            Document("d001", filler(5))]
    docs += [Document(f"d{i:03d}", rand_text(rng, 5)) for i in range(2, k)]
    gen.arrays["output_bias"][gen.vocab.index(minor)] += 50.0
    vecs = rng.normal(0.0, 1.0, size=(k, h))
    return enc, gen, rand_query(rng), answers, docs, vecs
