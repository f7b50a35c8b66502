import math

import numpy as np
import pytest

from ravqa.dataio import AnswerSet, Corpus, Document, FullQuery, QueryExample
from ravqa.dpr import (DprBatch, PretrainConfig, dpr_loss, mean_dpr_loss, pretrain,
                       select_positive, training_pairs)
from ravqa.encoder import encode, grad_check, init_dual_encoder, token_ids
from ravqa.generator import (AnswerScorerParams, AnswerVocab, OutOfVocabularyError,
                             answer_log_probs, answer_logits, best_answer, init_answer_scorer,
                             target_log_prob, target_log_prob_grad, zero_grads)
from ravqa.synth import SynthConfig, generate_synthetic_task

from helpers import WORDS, rand_batch, rand_encoder, rand_query, rand_scorer

X = FullQuery("x", ("what", "is", "this"))


def zero_scorer(answers):
    gen = init_answer_scorer(AnswerVocab(answers), 16, 4)
    for a in gen.arrays.values():
        a[...] = 0.0
    return gen


def test_vocab_sorted_unique_and_oov():
    v = AnswerVocab(["pie", "cake", "pie", "apple pie"])
    assert v.answers == ("apple pie", "cake", "pie")
    assert "Cake!" in v and v.index("PIE") == 2
    with pytest.raises(OutOfVocabularyError):
        v.index("tea")


def test_vocab_occurrences():
    v = AnswerVocab(["apple", "apple pie", "pie"])
    idx, counts = v.occurrences(("apple", "pie", "and", "pie"))
    assert dict(zip(idx.tolist(), counts.tolist())) == {0: 1, 1: 1, 2: 2}


def test_vocab_from_train_examples_only():
    ex = [QueryExample("a", "q", AnswerSet((("x", 1),))),
          QueryExample("b", "q", AnswerSet((("y", 1),)), split="test")]
    assert AnswerVocab.from_examples(ex).answers == ("x",)


def test_zero_parameters_uniform():
    gen = zero_scorer(["a", "b", "c", "d"])
    lp = answer_log_probs(gen, X, Document("z", "b b"), 3.0)
    # the overlap weight is zero too, so the copy feature has no effect
    assert np.allclose(lp, -math.log(4))
    assert target_log_prob(gen, X, None, "c") == pytest.approx(-math.log(4))
    assert best_answer(gen, X, None)[0] == "a"


def test_empty_vocab_rejected():
    with pytest.raises(ValueError):
        init_answer_scorer(AnswerVocab([]), 16, 4)


def test_dominant_logit_wins():
    gen = zero_scorer(["a", "b", "c"])
    gen.arrays["output_bias"][1] = 40.0
    ans, lp = best_answer(gen, X, None)
    assert ans == "b" and -1e-12 < lp <= 0.0


def test_copy_feature_default():
    gen = init_answer_scorer(AnswerVocab(["a", "b", "c"]), 16, 4)
    assert np.all(gen.arrays["output"][:, -1] == 1.0)
    zero = init_answer_scorer(AnswerVocab(["a", "b"]), 16, 4, copy_init=0.0)
    assert not zero.arrays["output"][:, -1].any()


def test_best_answer_matches_exhaustive_scan():
    rng = np.random.default_rng(0)
    for seed in range(10):
        gen = rand_scorer(rng, 20, 16, 8, seed)
        z = Document("z", " ".join(rng.choice(WORDS, size=5)))
        logits = answer_logits(gen, X, z, 0.7)
        best = max(range(20), key=lambda i: (logits[i], -i))
        ans, lp = best_answer(gen, X, z, 0.7)
        assert ans == gen.vocab.answers[best]
        lps = answer_log_probs(gen, X, z, 0.7)
        assert np.exp(lps).sum() == pytest.approx(1.0, abs=1e-9)
        assert all(lp >= l for l in lps)


def test_target_log_prob_gradient():
    rng = np.random.default_rng(1)
    gen = rand_scorer(rng)
    z = Document("z", "w01 w02 w03 w01")

    def fn(_):
        g = zero_grads(gen)
        lp, _ = target_log_prob_grad(gen, X, z, "w01", 0.3, -1.0, g)
        return -lp, g
    assert grad_check(fn, gen.arrays) < 1e-4
    # derivative with respect to the score feature
    eps = 1e-6
    lp, d = target_log_prob_grad(gen, X, z, "w01", 0.3)
    num = (target_log_prob(gen, X, z, "w01", 0.3 + eps)
           - target_log_prob(gen, X, z, "w01", 0.3 - eps)) / (2 * eps)
    assert d == pytest.approx(num, rel=1e-6)
    with pytest.raises(OutOfVocabularyError):
        target_log_prob(gen, X, z, "zzz")


def test_scorer_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    gen = rand_scorer(rng, seed=4)
    gen.save(tmp_path / "g.ckpt")
    back = AnswerScorerParams.load(tmp_path / "g.ckpt")
    assert back.vocab.answers == gen.vocab.answers and back.seed == 4
    assert np.array_equal(answer_logits(back, X, None), answer_logits(gen, X, None))
    gen.vocab.save(tmp_path / "v.txt")
    assert AnswerVocab.load(tmp_path / "v.txt").answers == gen.vocab.answers


# -- DPR ---------------------------------------------------------------------

def test_select_positive():
    ex = QueryExample("q", "what?", AnswerSet((("cake", 3), ("pie", 1))))
    corpus = Corpus([Document("d3", "some cake"), Document("d1", "a cake"),
                     Document("d0", "pie only"), Document("d2", "nothing")])
    assert select_positive(ex, corpus).doc_id == "d1"
    assert select_positive(ex, Corpus([Document("d0", "pie only")])).doc_id == "d0"
    assert select_positive(ex, Corpus([Document("d0", "nothing")])) is None


def test_dpr_batch_needs_two():
    with pytest.raises(ValueError):
        DprBatch((X,), (Document("a", "x"),))


def test_dpr_loss_equal_scores():
    enc = init_dual_encoder(16, 4)
    for a in enc.arrays.values():
        a[...] = 0.0
    batch = DprBatch((X, X), (Document("a", "x"), Document("b", "y")))
    loss, grads = dpr_loss(enc, batch)
    assert loss == pytest.approx(2 * math.log(2), abs=1e-12)
    b4 = DprBatch((X,) * 4, tuple(Document(str(i), "x") for i in range(4)))
    assert dpr_loss(enc, b4)[0] == pytest.approx(4 * math.log(4), abs=1e-12)


def test_dpr_loss_separated_scores():
    # saturated tanh gives F(a) = +1 and F(b) = -1 in all 10 dims: positives
    # score +10 and the in-batch negative -10
    enc = init_dual_encoder(64, 10)
    for a in enc.arrays.values():
        a[...] = 0.0
    ia, ib = token_ids(["a", "b"], 64)
    for side in ("query", "doc"):
        enc.arrays[f"{side}_projection"][...] = np.eye(10) * 50
        enc.arrays[f"{side}_embedding"][ia] = 1.0
        enc.arrays[f"{side}_embedding"][ib] = -1.0
    batch = DprBatch((FullQuery("a", ("a",)), FullQuery("b", ("b",))),
                     (Document("a", "a"), Document("b", "b")))
    loss, _ = dpr_loss(enc, batch)
    assert loss / 2 == pytest.approx(math.log1p(math.exp(-20)), rel=1e-6)
    assert loss / 2 == pytest.approx(2.06e-9, rel=1e-2)


def test_dpr_loss_matches_direct_softmax():
    rng = np.random.default_rng(3)
    enc = rand_encoder(rng, 16, 8)
    batch = rand_batch(rng, 4)
    Q = np.stack([encode(enc, "query", x.norm_tokens) for x in batch.queries])
    D = np.stack([encode(enc, "doc", z.norm_tokens) for z in batch.positives])
    S = Q @ D.T
    direct = sum(-S[i, i] + math.log(sum(math.exp(S[i, j]) for j in range(4))) for i in range(4))
    assert dpr_loss(enc, batch)[0] == pytest.approx(direct, rel=1e-12)


def test_dpr_gradient_and_nonnegative():
    rng = np.random.default_rng(4)
    enc = rand_encoder(rng, 16, 4)
    batch = DprBatch((rand_query(rng), rand_query(rng)),
                     (Document("a", "w01 w02"), Document("b", "w03 w04")))
    assert grad_check(lambda _: dpr_loss(enc, batch), enc.arrays) < 1e-4
    assert dpr_loss(enc, batch)[0] >= 0


def small_task():
    cfg = SynthConfig(n_entities=20, n_attributes=3, values_per_attribute=6, n_distractors=30,
                      n_train=64, n_test=16)
    return generate_synthetic_task(cfg, 0)


def test_pretrain_zero_lr_and_determinism():
    corpus, examples = small_task()
    enc = init_dual_encoder(256, 8, seed=0)
    same, rows = pretrain(enc, corpus, examples, PretrainConfig(epochs=1, learning_rate=0.0))
    assert same.fingerprint() == enc.fingerprint()
    assert rows[0]["epoch"] == 1 and rows[0]["n_examples"] > 0
    cfg = PretrainConfig(epochs=1, learning_rate=1e-3, seed=2)
    a, _ = pretrain(enc, corpus, examples, cfg)
    b, _ = pretrain(enc, corpus, examples, cfg)
    assert a.fingerprint() == b.fingerprint() != enc.fingerprint()


def test_pretrain_epoch_lowers_loss():
    corpus, examples = small_task()
    enc = init_dual_encoder(256, 16, seed=0, embedding_scale=1.0)
    pairs = training_pairs(corpus, [e for e in examples if e.split == "train"])
    before = mean_dpr_loss(enc, pairs, 16)
    trained, _ = pretrain(enc, corpus, examples, PretrainConfig(epochs=1, learning_rate=1e-3))
    assert mean_dpr_loss(trained, pairs, 16) < before


def test_pretrain_needs_examples():
    corpus = Corpus([Document("a", "nothing here")])
    ex = [QueryExample("q", "what?", AnswerSet((("cake", 1),)))]
    with pytest.raises(ValueError):
        pretrain(init_dual_encoder(16, 4), corpus, ex)
