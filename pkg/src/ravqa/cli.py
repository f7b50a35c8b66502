"""Command line: ``ravqa {synth,pretrain,train,eval,sweep}``.

Every command reads a JSON experiment config (``--config``) layered on a
preset (``--preset published`` or ``desk``), takes a ``--seed`` and writes its
artifacts into ``--out``. Re-running a command with the same inputs
rewrites identical bytes; progress messages go to stderr only.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .dataio import MalformedExampleError, read_corpus, read_questions, write_corpus, write_questions
from .encoder import DualEncoderParams
from .generator import AnswerScorerParams, OutOfVocabularyError
from .index import EmbeddingIndex, FingerprintMismatch
from .joint import LOG_FIELDS, Variant
from .pipeline import (ExperimentConfig, desk_scale, evaluate, run_pretrain, run_train, sweep,
                       write_csv, write_predictions)
from .synth import SynthConfig, generate_synthetic_task

log = logging.getLogger("ravqa")

CORPUS_FILE = "corpus.jsonl"
QUESTIONS_FILE = "questions.jsonl"
ENCODER_FILE = "encoder.ckpt"
INDEX_FILE = "index.bin"
GENERATOR_FILE = "generator.ckpt"
VOCAB_FILE = "vocab.txt"


class CliError(Exception):
    pass


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_config(args) -> ExperimentConfig:
    base = desk_scale() if args.preset == "desk" else ExperimentConfig()
    if not args.config:
        return base
    with open(args.config, encoding="utf-8") as f:
        user = json.load(f)
    if not isinstance(user, dict):
        raise CliError(f"{args.config}: config must be a JSON object")
    merged = base.to_dict()
    for key, val in user.items():
        if isinstance(val, dict) and isinstance(merged.get(key), dict):
            merged[key] = {**merged[key], **val}
        else:
            merged[key] = val
    return ExperimentConfig.from_dict(merged)


def _load_data(args):
    corpus_path = Path(args.corpus or Path(args.data) / CORPUS_FILE)
    questions_path = Path(args.questions or Path(args.data) / QUESTIONS_FILE)
    for p in (corpus_path, questions_path):
        if not p.is_file():
            raise CliError(f"missing input file {p}")
    return read_corpus(corpus_path), read_questions(questions_path)


def _load_pretrained(path) -> tuple[DualEncoderParams, EmbeddingIndex]:
    d = Path(path)
    if not (d / ENCODER_FILE).is_file() or not (d / INDEX_FILE).is_file():
        raise CliError(f"{d} does not hold {ENCODER_FILE} and {INDEX_FILE}")
    enc = DualEncoderParams.load(d / ENCODER_FILE)
    return enc, EmbeddingIndex.load(d / INDEX_FILE, enc)


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_synth(args) -> None:
    cfg = load_config(args)
    synth = SynthConfig.from_dict(cfg.synth)
    corpus, examples = generate_synthetic_task(synth, args.seed)
    out = _out(args)
    write_corpus(out / CORPUS_FILE, corpus)
    write_questions(out / QUESTIONS_FILE, examples)
    _dump_json(out / "synth_config.json", {"seed": args.seed, **synth.to_dict()})
    log.info("wrote %d documents and %d questions to %s", len(corpus), len(examples), out)


def cmd_pretrain(args) -> None:
    cfg = load_config(args)
    corpus, examples = _load_data(args)
    enc, index, rows = run_pretrain(corpus, examples, cfg, args.seed)
    out = _out(args)
    enc.save(out / ENCODER_FILE)
    index.save(out / INDEX_FILE)
    write_csv(out / "pretrain_log.csv", rows, ["epoch", "steps", "mean_loss", "n_examples"])
    _dump_json(out / "config.json", {"seed": args.seed, **cfg.to_dict()})


def _joint_overrides(args) -> dict:
    over = {}
    if args.variant is not None:
        over["variant"] = Variant.parse(args.variant)
    if getattr(args, "k_train", None) is not None:
        over["k_train"] = args.k_train
    return over


def cmd_train(args) -> None:
    cfg = load_config(args)
    over = _joint_overrides(args)
    jc = cfg.joint_config(args.seed, **over)
    corpus, examples = _load_data(args)
    enc = index = None
    if jc.variant.uses_retrieval:
        if not args.pretrained:
            raise CliError(f"{jc.variant.value} needs --pretrained (a pretrain output dir)")
        enc, index = _load_pretrained(args.pretrained)
    enc, gen, rows = run_train(enc, index, corpus, examples, cfg, args.seed, **over)
    out = _out(args)
    if enc is not None and jc.variant.uses_retrieval:
        enc.save(out / ENCODER_FILE)
    gen.save(out / GENERATOR_FILE)
    gen.vocab.save(out / VOCAB_FILE)
    write_csv(out / "train_log.csv", rows, LOG_FIELDS)
    meta = cfg.to_dict()
    meta["joint"] = {**meta["joint"], **{k: (v.value if isinstance(v, Variant) else v)
                                         for k, v in over.items()}}
    _dump_json(out / "config.json", {"seed": args.seed, **meta})


def _load_model(path):
    d = Path(path)
    if not (d / GENERATOR_FILE).is_file():
        raise CliError(f"{d} does not hold {GENERATOR_FILE}")
    gen = AnswerScorerParams.load(d / GENERATOR_FILE)
    enc = DualEncoderParams.load(d / ENCODER_FILE) if (d / ENCODER_FILE).is_file() else None
    return enc, gen


def cmd_eval(args) -> None:
    cfg = load_config(args)
    k_test = args.k_test if args.k_test is not None else cfg.k_test
    corpus, examples = _load_data(args)
    enc, gen = _load_model(args.model)
    index = None
    if enc is not None:
        if not args.pretrained:
            raise CliError("a retrieval model needs --pretrained for its document index")
        _, index = _load_pretrained(args.pretrained)
        index.validate(enc)
    ref = _load_model(args.closed_book)[1] if args.closed_book else None
    k_values = sorted({k for k in (*cfg.k_values, k_test) if k <= k_test})
    preds, report = evaluate(enc, gen, index, corpus, examples, k_test, ref, k_values)
    out = _out(args)
    write_predictions(out / "predictions.jsonl", preds)
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    (out / "report.txt").write_text(report.table(), encoding="utf-8")
    sys.stdout.write(report.table())


def cmd_sweep(args) -> None:
    cfg = load_config(args)
    corpus, examples = _load_data(args)
    if not args.pretrained:
        raise CliError("sweep needs --pretrained (a pretrain output dir)")
    enc, index = _load_pretrained(args.pretrained)
    ref = _load_model(args.closed_book)[1] if args.closed_book else None
    variant = Variant.parse(args.variant) if args.variant else Variant.RA_VQA
    if not variant.uses_retrieval:
        raise CliError(f"{variant.value} does not retrieve; nothing to sweep")
    rows = sweep(enc, index, corpus, examples, cfg, args.seed, args.k_train, args.k_test,
                 variant, ref)
    out = _out(args)
    write_csv(out / "sweep.csv", rows, ["variant", "k_train", "k_test", "metric", "value"])


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("K values must be positive integers")
    return vals


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ravqa", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True):
        p.add_argument("--config", help="JSON experiment config layered on the preset")
        p.add_argument("--preset", choices=("published", "desk"), default="published",
                       help="base hyperparameters (default: published)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=True, help="output directory")
        if data:
            p.add_argument("--data", default=".", help=f"dir with {CORPUS_FILE} and {QUESTIONS_FILE}")
            p.add_argument("--corpus", help="corpus JSONL (overrides --data)")
            p.add_argument("--questions", help="questions JSONL (overrides --data)")

    p = sub.add_parser("synth", help="generate a synthetic corpus and question set")
    common(p, data=False)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pretrain", help="DPR-pretrain the dual encoder and build the index")
    common(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="joint training of query encoder and answer scorer")
    common(p)
    p.add_argument("--pretrained", help="pretrain output dir (not needed for RA-VQA-NoDPR)")
    p.add_argument("--variant", help="RA-VQA, RA-VQA-NoPR, RA-VQA-NoCT, RA-VQA-FrDPR, "
                                     "RA-VQA-NoDPR or RAG")
    p.add_argument("--k-train", type=int, dest="k_train")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="predict on the test split and report metrics")
    common(p)
    p.add_argument("--model", required=True, help="train output dir")
    p.add_argument("--pretrained", help="pretrain output dir holding the index")
    p.add_argument("--closed-book", dest="closed_book",
                   help="train output dir of the closed-book reference model for HSR/FSR")
    p.add_argument("--k-test", type=int, dest="k_test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="train per K_train, evaluate per K_test, write sweep.csv")
    common(p)
    p.add_argument("--pretrained", help="pretrain output dir")
    p.add_argument("--closed-book", dest="closed_book")
    p.add_argument("--variant")
    p.add_argument("--k-train", type=_int_list, dest="k_train", default=[5],
                   help="comma-separated K_train values")
    p.add_argument("--k-test", type=_int_list, dest="k_test", default=[5],
                   help="comma-separated K_test values")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except (CliError, FingerprintMismatch, OutOfVocabularyError, MalformedExampleError,
            ValueError, KeyError, OSError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"ravqa {args.command}: error: {msg}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
