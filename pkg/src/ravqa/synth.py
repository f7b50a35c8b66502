"""Seeded synthetic knowledge-QA tasks.

The generated world is a set of invented entities, each with one value per
attribute type ("colour", "habitat", ...). Every (entity, attribute) fact gets
its own short document, plus distractor documents that mention entities or
attribute names without giving any value away. Questions come in three
regimes:

* knowledge -- the answer is only found in the corpus (test questions ask
  about facts never asked in training, optionally about entities never seen
  in training, so memorization does not help);
* closed -- the answer is an object named in the question's own features;
* unanswerable -- the answer appears in no document at all.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .dataio import AnswerSet, Corpus, Document, QueryExample

_ONSETS = ("b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z")
_VOWELS = ("a", "e", "i", "o", "u")

ATTRIBUTE_NAMES = (
    "colour", "habitat", "origin", "material", "diet", "sound", "shape",
    "texture", "season", "flavour", "element", "symbol",
)
_FILLER = (
    "often", "seen", "near", "old", "people", "say", "many", "places", "known",
    "records", "show", "local", "tales", "about", "during", "long", "journeys",
    "common", "rarely", "noted", "found", "stories", "region", "travellers",
)
_ADJECTIVES = ("small", "large", "bright", "dark", "wet", "striped", "shiny", "round")
_TEMPLATE_WORDS = {
    "the", "of", "is", "has", "known", "for", "its", "records", "list", "as", "and",
    "are", "in", "a", "photo", "with", "what", "this", "object", "shown", "picture",
}
_FACT_TEMPLATES = (
    "the {attr} of {ent} is {val}",
    "{ent} has {attr} {val}",
    "{ent} is known for its {val} {attr}",
    "records list the {attr} of {ent} as {val}",
)
_DISTRACTOR_TEMPLATES = (
    "{ent} {f1} {f2} {f3}",
    "the {attr} is {f1} {f2} in {f3} stories",
    "{ent} and its {attr} are {f1} {f2}",
)


@dataclass(frozen=True)
class SynthConfig:
    n_entities: int = 150
    n_attributes: int = 8
    values_per_attribute: int = 25
    # values per attribute that never appear in any document
    rare_values_per_attribute: int = 3
    n_distractors: int = 1000
    n_objects: int = 30
    n_train: int = 500
    n_test: int = 200
    # relative weights of (knowledge, closed, unanswerable)
    regime_mix: tuple[float, float, float] = (8.0, 1.0, 1.0)
    # probability that a second, minority answer is annotated
    minority_answer_rate: float = 0.3
    # share of entities reserved for test knowledge questions (0: entities shared)
    heldout_entity_fraction: float = 0.33

    def __post_init__(self):
        if self.n_entities < 1:
            raise ValueError("n_entities must be >= 1")
        if not 1 <= self.n_attributes <= len(ATTRIBUTE_NAMES):
            raise ValueError(f"n_attributes must be in 1..{len(ATTRIBUTE_NAMES)}")
        if self.values_per_attribute < 2:
            raise ValueError("values_per_attribute must be >= 2")
        if len(self.regime_mix) != 3 or min(self.regime_mix) < 0 or sum(self.regime_mix) <= 0:
            raise ValueError("regime_mix must be three non-negative weights with positive sum")
        if self.n_train < 0 or self.n_test < 0 or self.n_distractors < 0:
            raise ValueError("counts must be non-negative")
        if not 0.0 <= self.heldout_entity_fraction < 1.0:
            raise ValueError("heldout_entity_fraction must be in [0, 1)")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown synth config keys: {sorted(unknown)}")
        if "regime_mix" in known:
            known["regime_mix"] = tuple(float(x) for x in known["regime_mix"])
        return cls(**known)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["regime_mix"] = list(self.regime_mix)
        return d


def _pseudo_words(rng: np.random.Generator, n: int, taken: set[str]) -> list[str]:
    words = []
    while len(words) < n:
        n_syl = int(rng.integers(2, 4))
        w = "".join(_ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))]
                    for _ in range(n_syl))
        if w not in taken:
            taken.add(w)
            words.append(w)
    return words


def _regime_counts(n: int, mix) -> list[int]:
    w = np.asarray(mix, dtype=float)
    raw = n * w / w.sum()
    counts = np.floor(raw).astype(int)
    # largest remainder, first regime wins ties
    for i in np.argsort(-(raw - counts), kind="stable")[: n - counts.sum()]:
        counts[i] += 1
    return counts.tolist()


@dataclass
class _World:
    entities: list[str]
    attributes: list[str]
    values: dict[str, list[str]]
    rare: dict[str, list[str]]
    objects: list[str]
    facts: dict[tuple[int, int], str] = field(default_factory=dict)


def generate_synthetic_task(config: SynthConfig, seed: int) -> tuple[Corpus, list[QueryExample]]:
    """Build a corpus and train/test questions, deterministically from ``seed``."""
    rng = np.random.default_rng(seed)
    taken = set(ATTRIBUTE_NAMES) | set(_FILLER) | set(_ADJECTIVES) | _TEMPLATE_WORDS
    attrs = list(ATTRIBUTE_NAMES[: config.n_attributes])
    world = _World(
        entities=_pseudo_words(rng, config.n_entities, taken),
        attributes=attrs,
        values={a: _pseudo_words(rng, config.values_per_attribute, taken) for a in attrs},
        rare={a: _pseudo_words(rng, config.rare_values_per_attribute, taken) for a in attrs},
        objects=_pseudo_words(rng, config.n_objects, taken),
    )

    n_know = {}
    n_closed = {}
    n_unans = {}
    for split, n in (("train", config.n_train), ("test", config.n_test)):
        n_know[split], n_closed[split], n_unans[split] = _regime_counts(n, config.regime_mix)
    if (n_unans["train"] or n_unans["test"]) and config.rare_values_per_attribute < 1:
        raise ValueError("unanswerable questions need rare_values_per_attribute >= 1")

    # partition (entity, attribute) pairs: test facts, unanswerable facts, train facts
    pairs = [(e, a) for e in range(config.n_entities) for a in range(config.n_attributes)]
    order = rng.permutation(len(pairs))
    pairs = [pairs[i] for i in order]
    n_unans_pairs = min(len(pairs) // 4, n_unans["train"] + n_unans["test"])
    unans_pairs = pairs[:n_unans_pairs]
    if (n_unans["train"] or n_unans["test"]) and not unans_pairs:
        unans_pairs = pairs[:1]
    rest = pairs[len(unans_pairs):]
    n_held = int(round(config.heldout_entity_fraction * config.n_entities))
    if n_held:
        # answerable test facts only concern entities with no answerable training fact
        held = set(rng.permutation(config.n_entities)[:n_held].tolist())
        test_pairs = [p for p in rest if p[0] in held][: n_know["test"]]
        train_pairs = [p for p in rest if p[0] not in held]
    else:
        n_test_pairs = min(len(rest) // 2, n_know["test"])
        test_pairs = rest[:n_test_pairs]
        train_pairs = rest[n_test_pairs:]
    if n_know["test"] and not test_pairs:
        test_pairs = train_pairs
    if n_know["train"] and not train_pairs:
        train_pairs = test_pairs

    unans_set = set(unans_pairs)
    for e, a in pairs:
        pool = world.rare if (e, a) in unans_set else world.values
        vals = pool[attrs[a]]
        world.facts[(e, a)] = vals[rng.integers(len(vals))]

    texts = []
    for e, a in sorted(world.facts):
        if (e, a) in unans_set:
            continue
        tpl = _FACT_TEMPLATES[rng.integers(len(_FACT_TEMPLATES))]
        body = tpl.format(attr=attrs[a], ent=world.entities[e], val=world.facts[(e, a)])
        extra = rng.choice(_FILLER, size=int(rng.integers(0, 4)))
        texts.append(" ".join([body, *extra]) + ".")
    for _ in range(config.n_distractors):
        tpl = _DISTRACTOR_TEMPLATES[rng.integers(len(_DISTRACTOR_TEMPLATES))]
        f1, f2, f3 = rng.choice(_FILLER, size=3, replace=False)
        texts.append(tpl.format(ent=world.entities[rng.integers(config.n_entities)],
                                attr=attrs[rng.integers(config.n_attributes)],
                                f1=f1, f2=f2, f3=f3) + ".")
    # shuffled before numbering so doc-id tie-breaks carry no structure
    perm = rng.permutation(len(texts))
    width = max(5, len(str(len(texts))))
    corpus = Corpus(Document(f"d{i:0{width}d}", texts[j]) for i, j in enumerate(perm))

    examples: list[QueryExample] = []
    for split, know_pairs in (("train", train_pairs), ("test", test_pairs)):
        regimes = (["knowledge"] * n_know[split] + ["closed"] * n_closed[split]
                   + ["unanswerable"] * n_unans[split])
        regimes = [regimes[i] for i in rng.permutation(len(regimes))]
        know_iter = _cycle_shuffled(rng, know_pairs)
        unans_iter = _cycle_shuffled(rng, unans_pairs)
        for i, regime in enumerate(regimes):
            qid = f"{split}-{i:05d}"
            if regime == "closed":
                examples.append(_closed_question(rng, world, qid, split))
            else:
                e, a = next(know_iter if regime == "knowledge" else unans_iter)
                examples.append(_fact_question(rng, world, config, qid, split, e, a))
    return corpus, examples


def _cycle_shuffled(rng, items):
    if not items:
        return iter(())

    def gen():
        while True:
            for i in rng.permutation(len(items)):
                yield items[i]
    return gen()


def _answer_set(rng, main: str, minority_pool: list[str], rate: float) -> AnswerSet:
    main_count = int(rng.integers(3, 6))
    pairs = [(main, main_count)]
    others = [v for v in minority_pool if v != main]
    if others and main_count < 5 and rng.random() < rate:
        minor = others[rng.integers(len(others))]
        pairs.append((minor, int(rng.integers(1, 6 - main_count))))
    return AnswerSet(tuple(pairs))


def _scene(rng, world: _World, n: int) -> tuple[list[str], list[tuple[str, ...]]]:
    objs = [str(o) for o in rng.choice(world.objects, size=n, replace=False)]
    attrs = [tuple(str(a) for a in rng.choice(_ADJECTIVES, size=int(rng.integers(0, 2))))
             for _ in objs]
    return objs, attrs


def _fact_question(rng, world, config, qid, split, e, a) -> QueryExample:
    ent, attr = world.entities[e], world.attributes[a]
    objs, obj_attrs = _scene(rng, world, int(rng.integers(0, 3)))
    objs.insert(0, ent)
    obj_attrs.insert(0, ())
    caption = f"a photo of a {ent}" + (f" with a {objs[1]}" if len(objs) > 1 else "")
    ocr = str(rng.choice(_FILLER)) if rng.random() < 0.2 else ""
    main = world.facts[(e, a)]
    pool = world.rare[attr] if main in world.rare[attr] else world.values[attr]
    answers = _answer_set(rng, main, pool, config.minority_answer_rate)
    return QueryExample(qid, f"what is the {attr} of this {ent}?", answers,
                        tuple(objs), tuple(obj_attrs), caption, ocr, split)


def _closed_question(rng, world, qid, split) -> QueryExample:
    objs, obj_attrs = _scene(rng, world, 1)
    target = objs[0]
    caption = f"a photo of a {target}"
    answers = AnswerSet(((target, int(rng.integers(3, 6))),))
    return QueryExample(qid, "what object is shown in this picture?", answers,
                        tuple(objs), tuple(obj_attrs), caption, "", split)
