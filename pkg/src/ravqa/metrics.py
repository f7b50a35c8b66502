"""Answer, retrieval and integrated-system metrics."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .dataio import AnswerSet, Document, pseudo_relevance


def vqa_score(y: str, answers: AnswerSet) -> float:
    """min(#annotators who gave y / 3, 1)."""
    return min(answers.count(y) / 3.0, 1.0)


def exact_match(y: str, answers: AnswerSet) -> int:
    return min(answers.count(y), 1)


def _relevance(retrieved: Sequence, answers: AnswerSet, k: int) -> list[int]:
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > len(retrieved):
        raise ValueError(f"k={k} exceeds the {len(retrieved)} retrieved documents")
    return [z if isinstance(z, int) else pseudo_relevance(z, answers) for z in retrieved[:k]]


def prrecall_at_k(retrieved: Sequence[Document] | Sequence[int], answers: AnswerSet, k: int) -> int:
    """1 if any of the top-k documents is pseudo-relevant.

    ``retrieved`` holds documents in rank order, or precomputed 0/1 relevance flags.
    """
    return min(sum(_relevance(retrieved, answers, k)), 1)


def prprec_at_k(retrieved: Sequence[Document] | Sequence[int], answers: AnswerSet, k: int) -> float:
    """Fraction of the top-k documents that are pseudo-relevant."""
    return sum(_relevance(retrieved, answers, k)) / k


def hsr_fsr(y: str, y_closed_book: str, answers: AnswerSet) -> tuple[int, int]:
    """(hit success, free success) for one question."""
    hit = exact_match(y, answers) == 1
    closed = exact_match(y_closed_book, answers) == 1
    return int(hit and not closed), int(hit and closed)


@dataclass
class QuestionRecord:
    question_id: str
    answer: str
    closed_book_answer: str
    answers: AnswerSet
    # pseudo relevance of the retrieved documents, in rank order
    relevance: tuple[int, ...] = ()
    in_vocab: bool = True


@dataclass
class MetricsReport:
    vqa_score: float
    em: float
    prrecall_at: dict[int, float]
    prprec_at: dict[int, float]
    hsr: float
    fsr: float
    hf_ratio: float | None
    n_questions: int
    oov_gold_rate: float
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["prrecall_at"] = {str(k): v for k, v in sorted(self.prrecall_at.items())}
        d["prprec_at"] = {str(k): v for k, v in sorted(self.prprec_at.items())}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def table(self) -> str:
        """Human-readable summary; rates in percent with 2 decimals."""
        def pct(v):
            return f"{100 * v:.2f}"
        rows = [("questions", str(self.n_questions)),
                ("VQA score", pct(self.vqa_score)),
                ("EM", pct(self.em))]
        rows += [(f"PRRecall@{k}", pct(v)) for k, v in sorted(self.prrecall_at.items())]
        rows += [(f"PRPrec@{k}", pct(v)) for k, v in sorted(self.prprec_at.items())]
        rows += [("HSR", pct(self.hsr)), ("FSR", pct(self.fsr)),
                 ("H/F", "n/a" if self.hf_ratio is None else f"{self.hf_ratio:.2f}"),
                 ("gold OOV", pct(self.oov_gold_rate))]
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{name:<{width}}  {val:>8}" for name, val in rows) + "\n"


def aggregate(records: Iterable[QuestionRecord], k_values: Sequence[int] = ()) -> MetricsReport:
    """Means over questions. H/F is the ratio of the mean HSR to the mean FSR."""
    records = list(records)
    if not records:
        raise ValueError("cannot aggregate an empty evaluation set")
    n = len(records)
    vqa = math.fsum(vqa_score(r.answer, r.answers) for r in records) / n
    em = math.fsum(exact_match(r.answer, r.answers) for r in records) / n
    hf = [hsr_fsr(r.answer, r.closed_book_answer, r.answers) for r in records]
    hsr = math.fsum(h for h, _ in hf) / n
    fsr = math.fsum(f for _, f in hf) / n
    rec, prec = {}, {}
    for k in sorted(set(k_values)):
        rec[k] = math.fsum(prrecall_at_k(r.relevance, r.answers, k) for r in records) / n
        prec[k] = math.fsum(prprec_at_k(r.relevance, r.answers, k) for r in records) / n
    oov = sum(not r.in_vocab for r in records) / n
    return MetricsReport(vqa_score=vqa, em=em, prrecall_at=rec, prprec_at=prec, hsr=hsr, fsr=fsr,
                         hf_ratio=(hsr / fsr) if fsr > 0 else None, n_questions=n,
                         oov_gold_rate=oov)


def mean_std(reports: Sequence[MetricsReport]) -> dict:
    """Mean and population std of the scalar metrics across seeded runs."""
    out = {}
    for name in ("vqa_score", "em", "hsr", "fsr", "oov_gold_rate"):
        vals = np.array([getattr(r, name) for r in reports])
        out[name] = {"mean": float(vals.mean()), "std": float(vals.std())}
    for attr in ("prrecall_at", "prprec_at"):
        keys = set.intersection(*(set(getattr(r, attr)) for r in reports))
        for k in sorted(keys):
            vals = np.array([getattr(r, attr)[k] for r in reports])
            out[f"{attr}{k}"] = {"mean": float(vals.mean()), "std": float(vals.std())}
    return out
