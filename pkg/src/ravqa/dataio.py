"""Corpora, questions and answer sets, plus the string-level helpers shared by
every stage: normalization, pseudo relevance and per-document targets.

Files are JSON-lines. A corpus line is ``{"doc_id": ..., "text": ...}`` and a
question line carries the question, its pre-extracted visual features and the
annotated answers with annotator counts.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

_NON_WORD = re.compile(r"[\W_]+")

SECTIONS = ("q", "obj", "cap", "ocr")
OBJECT_SEP = " | "


class MalformedExampleError(ValueError):
    """An example violates the data contract (e.g. an empty answer set)."""


def normalize(text: str) -> list[str]:
    """Lowercase, turn punctuation into spaces and split on whitespace."""
    return _NON_WORD.sub(" ", text.lower()).split()


def normalize_answer(text: str) -> str:
    return " ".join(normalize(text))


def _padded(tokens: Sequence[str]) -> str:
    # tokens never contain spaces, so substring search on the padded join is
    # exactly a contiguous token-sequence search
    return " " + " ".join(tokens) + " "


@dataclass(frozen=True)
class Document:
    doc_id: str
    raw_text: str
    norm_tokens: tuple[str, ...] = field(init=False)
    _haystack: str = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        toks = tuple(normalize(self.raw_text))
        object.__setattr__(self, "norm_tokens", toks)
        object.__setattr__(self, "_haystack", _padded(toks))

    def contains(self, answer: str) -> bool:
        """Token-boundary containment of a (normalized) answer string."""
        needle = normalize(answer)
        if not needle:
            return False
        return _padded(needle) in self._haystack


class Corpus:
    """Ordered, id-unique collection of documents."""

    def __init__(self, documents: Iterable[Document]):
        self.documents: tuple[Document, ...] = tuple(documents)
        if not self.documents:
            raise ValueError("corpus must contain at least one document")
        self._postings = None
        self._by_id = {}
        for d in self.documents:
            if d.doc_id in self._by_id:
                raise ValueError(f"duplicate doc_id {d.doc_id!r}")
            self._by_id[d.doc_id] = d

    def __len__(self) -> int:
        return len(self.documents)

    def __iter__(self) -> Iterator[Document]:
        return iter(self.documents)

    def __getitem__(self, doc_id: str) -> Document:
        return self._by_id[doc_id]

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._by_id

    @property
    def size(self) -> int:
        return len(self.documents)

    def containing(self, answer: str) -> list[Document]:
        """Documents that contain ``answer`` at token boundaries, in corpus order."""
        needle = normalize(answer)
        if not needle:
            return []
        if self._postings is None:
            postings: dict[str, list[int]] = {}
            for i, d in enumerate(self.documents):
                for tok in set(d.norm_tokens):
                    postings.setdefault(tok, []).append(i)
            self._postings = postings
        # the rarest token bounds the candidate set; containment is verified exactly
        cands = min((self._postings.get(t, []) for t in needle), key=len)
        return [self.documents[i] for i in cands if self.documents[i].contains(answer)]


@dataclass(frozen=True)
class AnswerSet:
    """Annotated answers with annotator counts. Answers are stored normalized."""

    entries: tuple[tuple[str, int], ...]

    def __post_init__(self):
        if not self.entries:
            raise MalformedExampleError("answer set is empty")
        seen = set()
        for ans, count in self.entries:
            if ans in seen:
                raise MalformedExampleError(f"duplicate answer {ans!r}")
            if int(count) < 1:
                raise MalformedExampleError(f"annotator count for {ans!r} must be >= 1")
            seen.add(ans)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, int]]) -> "AnswerSet":
        """Normalize answer strings, merging the counts of answers that collide."""
        merged: dict[str, int] = {}
        for ans, count in pairs:
            key = normalize_answer(ans)
            if not key:
                continue
            merged[key] = merged.get(key, 0) + int(count)
        return cls(tuple(merged.items()))

    def count(self, answer: str) -> int:
        """Number of annotators who gave ``answer`` (0 when absent)."""
        key = normalize_answer(answer)
        for ans, c in self.entries:
            if ans == key:
                return c
        return 0

    @property
    def answers(self) -> tuple[str, ...]:
        return tuple(a for a, _ in self.entries)

    def by_popularity(self) -> list[tuple[str, int]]:
        """Entries sorted by count descending, ties lexicographically."""
        return sorted(self.entries, key=lambda e: (-e[1], e[0]))


@dataclass(frozen=True)
class QueryExample:
    question_id: str
    question: str
    answers: AnswerSet
    objects: tuple[str, ...] = ()
    attributes: tuple[tuple[str, ...], ...] = ()
    caption: str = ""
    ocr_text: str = ""
    split: str = "train"

    def __post_init__(self):
        if not self.question.strip():
            raise MalformedExampleError(f"{self.question_id}: empty question")
        if self.attributes and len(self.attributes) != len(self.objects):
            raise MalformedExampleError(
                f"{self.question_id}: {len(self.attributes)} attribute lists "
                f"for {len(self.objects)} objects")
        if self.split not in ("train", "test"):
            raise MalformedExampleError(f"{self.question_id}: unknown split {self.split!r}")


@dataclass(frozen=True)
class FullQuery:
    text: str
    norm_tokens: tuple[str, ...]


def _wrap(tag: str, content: str) -> str:
    content = content.strip()
    if content:
        return f"<{tag}> {content} </{tag}>"
    return f"<{tag}> </{tag}>"


def build_full_query(ex: QueryExample) -> FullQuery:
    """Serialize question and visual features into one marked-up query string.

    Sections appear in the order question, objects, caption, OCR. Each object
    is prefixed by its attributes and objects are joined by ``" | "``.
    """
    attrs = ex.attributes or tuple(() for _ in ex.objects)
    objects = OBJECT_SEP.join(
        " ".join([*a, o]) for o, a in zip(ex.objects, attrs))
    text = " ".join([
        _wrap("q", ex.question),
        _wrap("obj", objects),
        _wrap("cap", ex.caption),
        _wrap("ocr", ex.ocr_text),
    ])
    return FullQuery(text=text, norm_tokens=tuple(normalize(text)))


_SECTION_RE = re.compile(
    r"^<q> (?P<q>.*?) ?</q> <obj> (?P<obj>.*?) ?</obj> "
    r"<cap> (?P<cap>.*?) ?</cap> <ocr> (?P<ocr>.*?) ?</ocr>$", re.S)


def parse_full_query(text: str) -> dict[str, str]:
    """Split a full query string back into its four sections."""
    m = _SECTION_RE.match(text)
    if m is None:
        raise ValueError("text is not a well-formed full query")
    return {k: m.group(k) for k in SECTIONS}


def pseudo_relevance(doc: Document, answers: AnswerSet) -> int:
    """1 if the document contains any annotated answer, else 0."""
    return int(any(doc.contains(a) for a in answers.answers))


def most_popular_answer(answers: AnswerSet) -> str:
    if not answers.entries:
        raise MalformedExampleError("answer set is empty")
    return answers.by_popularity()[0][0]


def customized_target(doc: Document, answers: AnswerSet) -> str:
    """Most popular answer contained in ``doc``; the overall most popular otherwise."""
    ranked = answers.by_popularity()
    for ans, _ in ranked:
        if doc.contains(ans):
            return ans
    return ranked[0][0]


# -- JSON-lines ingestion ---------------------------------------------------

def _iter_jsonl(path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}:{lineno}: {e}") from None


def _write_jsonl(path, rows: Iterable[dict]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for row in rows:
            f.write(json.dumps(row, ensure_ascii=False) + "\n")


def read_corpus(path) -> Corpus:
    return Corpus(Document(str(r["doc_id"]), r["text"]) for r in _iter_jsonl(path))


def write_corpus(path, corpus: Corpus) -> None:
    _write_jsonl(path, ({"doc_id": d.doc_id, "text": d.raw_text} for d in corpus))


def example_from_json(r: dict) -> QueryExample:
    try:
        answers = AnswerSet.from_pairs((a["answer"], a["count"]) for a in r["answers"])
        return QueryExample(
            question_id=str(r["question_id"]),
            question=r["question"],
            answers=answers,
            objects=tuple(r.get("objects", ())),
            attributes=tuple(tuple(a) for a in r.get("attributes", ())),
            caption=r.get("caption", ""),
            ocr_text=r.get("ocr", ""),
            split=r.get("split", "train"),
        )
    except KeyError as e:
        raise MalformedExampleError(f"question record missing field {e}") from None


def example_to_json(ex: QueryExample) -> dict:
    return {
        "question_id": ex.question_id,
        "question": ex.question,
        "objects": list(ex.objects),
        "attributes": [list(a) for a in ex.attributes],
        "caption": ex.caption,
        "ocr": ex.ocr_text,
        "answers": [{"answer": a, "count": c} for a, c in ex.answers.entries],
        "split": ex.split,
    }


def read_questions(path) -> list[QueryExample]:
    examples = [example_from_json(r) for r in _iter_jsonl(path)]
    ids = [e.question_id for e in examples]
    if len(set(ids)) != len(ids):
        raise MalformedExampleError(f"{path}: duplicate question_id")
    return examples


def write_questions(path, examples: Iterable[QueryExample]) -> None:
    _write_jsonl(path, (example_to_json(e) for e in examples))
