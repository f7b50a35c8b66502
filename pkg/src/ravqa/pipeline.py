"""Stage-level helpers shared by the command line and the experiment scripts:
pretraining, joint training, evaluation and K sweeps."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

from .dataio import Corpus, QueryExample, build_full_query, pseudo_relevance
from .dpr import PretrainConfig, pretrain
from .encoder import DualEncoderParams, init_dual_encoder
from .generator import AnswerScorerParams, AnswerVocab, init_answer_scorer
from .index import EmbeddingIndex, build_index
from .inference import decode_closed_book, decode_retrieved, retrieve
from .joint import JointConfig, Variant, train_joint
from .metrics import MetricsReport, QuestionRecord, aggregate

PREDICTION_FIELDS = ("question_id", "answer", "doc_id", "joint_prob", "closed_book_answer")


@dataclass
class ModelConfig:
    vocab_size: int = 4096
    dim: int = 64
    gen_dim: int = 64
    tied_init: bool = True
    # init range of the encoder embedding tables
    embedding_scale: float = 0.1
    # starting weight of the answer scorer's per-candidate overlap feature
    copy_init: float = 1.0


@dataclass
class ExperimentConfig:
    """Everything a run needs besides data and seed.

    The library defaults follow the published schedule (constant 1e-5 for
    pretraining over 6 epochs; 1e-5 / 6e-5 decaying over 10 epochs for joint
    training). ``desk_scale()`` gives the rates used on synthetic tasks.
    """

    model: ModelConfig = field(default_factory=ModelConfig)
    pretrain: dict = field(default_factory=lambda: asdict(PretrainConfig()))
    joint: dict = field(default_factory=lambda: {
        k: (v.value if isinstance(v, Variant) else v) for k, v in asdict(JointConfig()).items()})
    k_test: int = 5
    k_values: tuple[int, ...] = (1, 5)
    synth: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        cfg = cls()
        unknown = set(d) - {"model", "pretrain", "joint", "k_test", "k_values", "synth"}
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        if "model" in d:
            bad = set(d["model"]) - set(ModelConfig.__dataclass_fields__)
            if bad:
                raise ValueError(f"unknown model keys: {sorted(bad)}")
            cfg.model = ModelConfig(**{**asdict(cfg.model), **d["model"]})
        for section, known in (("pretrain", PretrainConfig.__dataclass_fields__),
                               ("joint", JointConfig.__dataclass_fields__)):
            if section in d:
                bad = set(d[section]) - set(known)
                if bad:
                    raise ValueError(f"unknown {section} keys: {sorted(bad)}")
                getattr(cfg, section).update(d[section])
        if "k_test" in d:
            cfg.k_test = int(d["k_test"])
        if "k_values" in d:
            cfg.k_values = tuple(int(k) for k in d["k_values"])
        cfg.synth = dict(d.get("synth", {}))
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))

    def to_dict(self) -> dict:
        return {"model": asdict(self.model), "pretrain": dict(self.pretrain),
                "joint": dict(self.joint), "k_test": self.k_test,
                "k_values": list(self.k_values), "synth": dict(self.synth)}

    def pretrain_config(self, seed: int) -> PretrainConfig:
        return PretrainConfig.from_dict({**self.pretrain, "seed": seed})

    def joint_config(self, seed: int, **overrides) -> JointConfig:
        return JointConfig.from_dict({**self.joint, "seed": seed, **overrides})


def desk_scale() -> ExperimentConfig:
    """Model size, learning rates and epochs sized for the synthetic tasks (see README)."""
    return ExperimentConfig.from_dict({
        "model": {"dim": 256, "gen_dim": 64, "embedding_scale": 1.0, "copy_init": 1.0},
        "pretrain": {"batch_size": 16, "epochs": 6, "learning_rate": 1e-4},
        "joint": {"k_train": 5, "epochs": 10, "lr_retriever": 3e-5, "lr_generator": 1e-2,
                  "batch_size": 8},
        "k_test": 5,
        "k_values": [1, 5],
    })


def split(examples: Sequence[QueryExample], name: str) -> list[QueryExample]:
    return [e for e in examples if e.split == name]


def run_pretrain(corpus: Corpus, examples: Sequence[QueryExample], cfg: ExperimentConfig,
                 seed: int):
    """Initialize and pretrain the dual encoder, then build the frozen index."""
    m = cfg.model
    enc = init_dual_encoder(m.vocab_size, m.dim, seed=seed, tied=m.tied_init,
                            embedding_scale=m.embedding_scale)
    enc, log = pretrain(enc, corpus, split(examples, "train"), cfg.pretrain_config(seed))
    return enc, build_index(corpus, enc), log


def run_train(enc: DualEncoderParams | None, index: EmbeddingIndex | None, corpus: Corpus,
              examples: Sequence[QueryExample], cfg: ExperimentConfig, seed: int,
              **overrides):
    jc = cfg.joint_config(seed, **overrides)
    vocab = AnswerVocab.from_examples(examples)
    gen = init_answer_scorer(vocab, cfg.model.vocab_size, cfg.model.gen_dim, seed=seed,
                             copy_init=cfg.model.copy_init)
    return train_joint(enc, gen, corpus, index, examples, jc)


def evaluate(enc: DualEncoderParams | None, gen: AnswerScorerParams, index: EmbeddingIndex | None,
             corpus: Corpus, examples: Sequence[QueryExample], k_test: int,
             closed_book: AnswerScorerParams | None = None,
             k_values: Sequence[int] = ()) -> tuple[list[dict], MetricsReport]:
    """Predict on the test split and aggregate metrics.

    Without ``enc`` the model answers closed-book (the NoDPR system).
    ``closed_book`` is the reference model for HSR/FSR; it defaults to ``gen``
    queried without documents.
    """
    ref = closed_book if closed_book is not None else gen
    test = split(examples, "test")
    if not test:
        raise ValueError("no test-split questions to evaluate")
    if enc is not None:
        index.validate(enc)
    preds, records = [], []
    for ex in test:
        query = build_full_query(ex)
        cb = decode_closed_book(ref, query)
        in_vocab = any(a in gen.vocab for a in ex.answers.answers)
        if enc is None:
            answer = decode_closed_book(gen, query)
            preds.append({"question_id": ex.question_id, "answer": answer, "doc_id": None,
                          "joint_prob": None, "closed_book_answer": cb, "retrieved": []})
            records.append(QuestionRecord(ex.question_id, answer, cb, ex.answers, (), in_vocab))
            continue
        ret = retrieve(enc, index, query, k_test)
        docs = [corpus[d] for d in ret.doc_ids]
        dec = decode_retrieved(gen, query, docs, ret)
        preds.append({"question_id": ex.question_id, "answer": dec.answer, "doc_id": dec.doc_id,
                      "joint_prob": dec.joint_prob, "closed_book_answer": cb,
                      "retrieved": list(ret.doc_ids)})
        rel = tuple(pseudo_relevance(z, ex.answers) for z in docs)
        records.append(QuestionRecord(ex.question_id, dec.answer, cb, ex.answers, rel, in_vocab))
    ks = [k for k in (tuple(k_values) or (k_test,)) if enc is not None and k <= k_test]
    return preds, aggregate(records, ks)


def write_predictions(path, preds: Sequence[dict]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for p in preds:
            f.write(json.dumps(p, ensure_ascii=False) + "\n")


def read_predictions(path) -> list[dict]:
    with open(path, encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def write_csv(path, rows: Sequence[dict], fields: Sequence[str] | None = None) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fields = list(fields or (rows[0].keys() if rows else []))
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.DictWriter(f, fieldnames=fields, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def sweep(enc: DualEncoderParams, index: EmbeddingIndex, corpus: Corpus,
          examples: Sequence[QueryExample], cfg: ExperimentConfig, seed: int,
          k_train_values: Sequence[int], k_test_values: Sequence[int],
          variant: Variant | str = Variant.RA_VQA,
          closed_book: AnswerScorerParams | None = None) -> list[dict]:
    """Train once per K_train and evaluate each model at every K_test.

    Returns long-format rows ``(variant, k_train, k_test, metric, value)``.
    """
    variant = Variant.parse(variant) if not isinstance(variant, Variant) else variant
    rows = []
    for kt in sorted(set(k_train_values)):
        q_enc, gen, _ = run_train(enc, index, corpus, examples, cfg, seed,
                                  k_train=kt, variant=variant)
        for ke in sorted(set(k_test_values)):
            _, rep = evaluate(q_enc, gen, index, corpus, examples, ke, closed_book,
                              k_values=[k for k in sorted(set(k_test_values)) if k <= ke])
            flat = {"vqa_score": rep.vqa_score, "em": rep.em, "hsr": rep.hsr, "fsr": rep.fsr,
                    **{f"prrecall@{k}": v for k, v in rep.prrecall_at.items()},
                    **{f"prprec@{k}": v for k, v in rep.prprec_at.items()}}
            for metric, value in flat.items():
                rows.append({"variant": variant.value, "k_train": kt, "k_test": ke,
                             "metric": metric, "value": value})
    return rows
