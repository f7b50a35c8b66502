import math

import pytest
from hypothesis import given, strategies as st

from ravqa.dataio import AnswerSet, Document
from ravqa.metrics import (MetricsReport, QuestionRecord, aggregate, exact_match, hsr_fsr,
                           mean_std, prprec_at_k, prrecall_at_k, vqa_score)

S = AnswerSet((("cake", 3), ("pie", 2), ("tea", 1), ("jam", 5)))


def test_vqa_score_exact():
    assert vqa_score("cake", S) == 1.0
    assert vqa_score("pie", S) == 2 / 3
    assert vqa_score("tea", S) == 1 / 3
    assert vqa_score("jam", S) == 1.0
    assert vqa_score("bun", S) == 0.0
    assert vqa_score("Pie!", S) == 2 / 3


def test_exact_match_clamps():
    assert exact_match("tea", S) == 1
    assert exact_match("jam", S) == 1
    assert exact_match("bun", S) == 0


def docs(*texts):
    return [Document(f"d{i}", t) for i, t in enumerate(texts)]


def test_prrecall_and_prprec_hand_cases():
    ret = docs("no", "some cake", "none", "pie here", "x")
    assert prrecall_at_k(ret, S, 1) == 0
    assert prrecall_at_k(ret, S, 2) == 1
    assert prrecall_at_k(docs("a", "b"), S, 2) == 0
    assert prprec_at_k(ret, S, 5) == 0.4
    assert prprec_at_k(docs("cake", "pie"), S, 2) == 1.0
    assert prprec_at_k(docs("a", "b", "c"), S, 3) == 0.0
    assert prrecall_at_k([0, 0, 1], S, 3) == 1
    with pytest.raises(ValueError):
        prrecall_at_k(ret, S, 6)
    with pytest.raises(ValueError):
        prprec_at_k(ret, S, 0)


@given(st.lists(st.integers(0, 1), min_size=1, max_size=12))
def test_retrieval_metrics_monotone_and_scan(flags):
    prev_rec, prev_hits = 0, 0
    for k in range(1, len(flags) + 1):
        rec = prrecall_at_k(flags, S, k)
        hits = prprec_at_k(flags, S, k) * k
        assert rec == int(any(flags[:k]))
        assert rec >= prev_rec and hits >= prev_hits - 1e-12
        prev_rec, prev_hits = rec, hits


def test_hsr_fsr_cases():
    assert hsr_fsr("cake", "bun", S) == (1, 0)
    assert hsr_fsr("cake", "pie", S) == (0, 1)
    assert hsr_fsr("bun", "pie", S) == (0, 0)
    assert hsr_fsr("bun", "bun", S) == (0, 0)


@given(st.sampled_from(["cake", "pie", "tea", "jam", "bun", "x"]),
       st.sampled_from(["cake", "pie", "tea", "jam", "bun", "x"]))
def test_hsr_plus_fsr_is_em(y, y_cb):
    h, f = hsr_fsr(y, y_cb, S)
    assert h + f == exact_match(y, S)
    em, v = exact_match(y, S), vqa_score(y, S)
    assert (v >= 1 / 3) if em else (v == 0)


def rec(qid, ans, cb="bun", rel=(), in_vocab=True):
    return QuestionRecord(qid, ans, cb, S, tuple(rel), in_vocab)


def test_aggregate_examples():
    r = aggregate([rec("a", "cake")])
    assert r.vqa_score == 1.0 and r.n_questions == 1
    r = aggregate([rec("a", "cake", rel=(1, 0)), rec("b", "bun", rel=(0, 0), in_vocab=False)],
                  k_values=[1, 2])
    assert r.vqa_score == 0.5 and r.em == 0.5
    assert r.prrecall_at == {1: 0.5, 2: 0.5} and r.prprec_at == {1: 0.5, 2: 0.25}
    assert (r.hsr, r.fsr, r.hf_ratio) == (0.5, 0.0, None)
    assert r.oov_gold_rate == 0.5
    with pytest.raises(ValueError):
        aggregate([])


def test_hf_ratio_of_means():
    r = aggregate([rec("a", "cake", cb="bun"), rec("b", "cake", cb="pie"),
                   rec("c", "pie", cb="cake"), rec("d", "cake", cb="bun")])
    assert (r.hsr, r.fsr) == (0.5, 0.5) and r.hf_ratio == 1.0


def test_report_serialization():
    r = aggregate([rec("a", "pie", rel=(1,))], k_values=[1])
    d = r.to_dict()
    assert d["prrecall_at"] == {"1": 1.0} and d["vqa_score"] == 2 / 3
    assert r.to_json() == r.to_json()
    table = r.table()
    assert "VQA score" in table and "66.67" in table and "H/F" in table


def test_mean_std():
    a = aggregate([rec("a", "cake")])
    b = aggregate([rec("a", "bun")])
    ms = mean_std([a, b])
    assert ms["em"] == {"mean": 0.5, "std": 0.5}
    assert math.isclose(ms["vqa_score"]["mean"], 0.5)
    assert isinstance(a, MetricsReport)
