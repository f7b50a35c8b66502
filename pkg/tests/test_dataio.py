import pytest
from hypothesis import given, strategies as st

from ravqa.dataio import (AnswerSet, Corpus, Document, MalformedExampleError, QueryExample,
                          build_full_query, customized_target, example_from_json,
                          example_to_json, most_popular_answer, normalize, parse_full_query,
                          pseudo_relevance, read_corpus, read_questions, write_corpus,
                          write_questions)


def S(*pairs):
    return AnswerSet.from_pairs(pairs)


def test_normalize_examples():
    assert normalize("A Hawk!") == ["a", "hawk"]
    assert normalize("") == []
    assert normalize("New   York.") == ["new", "york"]


@given(st.text())
def test_normalize_idempotent(text):
    toks = normalize(text)
    assert normalize(" ".join(toks)) == toks


def test_full_query_layout():
    ex = QueryExample("q1", "what sport is this?", S(("polo", 3)),
                      objects=("horse", "man"), caption="a man rides a horse")
    x = build_full_query(ex)
    assert x.text == ("<q> what sport is this? </q> <obj> horse | man </obj> "
                      "<cap> a man rides a horse </cap> <ocr> </ocr>")


def test_full_query_empty_features():
    x = build_full_query(QueryExample("q", "why?", S(("x", 1))))
    assert x.text == "<q> why? </q> <obj> </obj> <cap> </cap> <ocr> </ocr>"


def test_full_query_attributes_prefix_objects():
    ex = QueryExample("q", "what is it?", S(("x", 1)), objects=("table",),
                      attributes=(("brown", "wooden"),))
    assert "<obj> brown wooden table </obj>" in build_full_query(ex).text


_section = st.text(alphabet=st.characters(whitelist_categories=("L", "N"), whitelist_characters=" ?"),
                   max_size=20).map(lambda s: " ".join(s.split()))


@given(_section.filter(bool), st.lists(_section.filter(bool), max_size=3), _section, _section)
def test_full_query_round_trip(question, objects, caption, ocr):
    ex = QueryExample("q", question, S(("x", 1)), objects=tuple(objects), caption=caption,
                      ocr_text=ocr)
    parts = parse_full_query(build_full_query(ex).text)
    assert parts == {"q": question, "obj": " | ".join(objects), "cap": caption, "ocr": ocr}


def test_pseudo_relevance_examples():
    assert pseudo_relevance(Document("a", "the hawk is a bird of prey"), S(("hawk", 3))) == 1
    assert pseudo_relevance(Document("a", "mohawk haircut"), S(("hawk", 3))) == 0
    assert pseudo_relevance(Document("a", "anything at all"), S(("zzz", 1))) == 0


def test_pseudo_relevance_case_and_punctuation_invariant():
    assert pseudo_relevance(Document("a", "The NEW-York skyline."), S(("new york", 1))) == 1
    assert pseudo_relevance(Document("a", "the new york skyline"), S(("New York!", 1))) == 1


def test_most_popular_answer():
    assert most_popular_answer(S(("cake", 4), ("pie", 1))) == "cake"
    assert most_popular_answer(S(("a", 2), ("b", 2))) == "a"
    assert most_popular_answer(S(("x", 1))) == "x"


def test_answer_set_rejects_empty_and_bad_counts():
    with pytest.raises(MalformedExampleError):
        AnswerSet(())
    with pytest.raises(MalformedExampleError):
        AnswerSet((("a", 0),))
    with pytest.raises(MalformedExampleError):
        AnswerSet((("a", 1), ("a", 2)))


def test_answer_set_merges_normalized_duplicates():
    s = S(("Cake", 2), ("cake!", 1))
    assert s.entries == (("cake", 3),)


@pytest.mark.parametrize("text,expected", [("i like pie", "pie"), ("no dessert", "cake"),
                                           ("cake and pie", "cake")])
def test_customized_target(text, expected):
    assert customized_target(Document("z", text), S(("cake", 3), ("pie", 2))) == expected


@given(st.lists(st.sampled_from(["cake", "pie", "tea", "jam", "bun"]), max_size=6),
       st.lists(st.tuples(st.sampled_from(["cake", "pie", "tea"]), st.integers(1, 5)),
                min_size=1, max_size=3))
def test_customized_target_properties(doc_words, pairs):
    answers = AnswerSet.from_pairs(pairs)
    z = Document("z", " ".join(doc_words))
    t = customized_target(z, answers)
    assert t in answers.answers
    if pseudo_relevance(z, answers) == 0:
        assert t == most_popular_answer(answers)


def test_query_example_validation():
    with pytest.raises(MalformedExampleError):
        QueryExample("q", "  ", S(("x", 1)))
    with pytest.raises(MalformedExampleError):
        QueryExample("q", "why", S(("x", 1)), objects=("a",), attributes=((), ()))
    with pytest.raises(MalformedExampleError):
        QueryExample("q", "why", S(("x", 1)), split="dev")


def test_corpus_lookup_and_containing():
    c = Corpus([Document("b", "red fox"), Document("a", "a red panda"), Document("c", "panda red")])
    assert [d.doc_id for d in c.containing("red panda")] == ["a"]
    assert [d.doc_id for d in c.containing("red")] == ["b", "a", "c"]
    assert c.containing("") == []
    assert "a" in c and c["c"].raw_text == "panda red"
    with pytest.raises(ValueError):
        Corpus([Document("a", "x"), Document("a", "y")])
    with pytest.raises(ValueError):
        Corpus([])


def test_jsonl_round_trip(tmp_path):
    corpus = Corpus([Document("d1", "Hello, world"), Document("d2", "ünïcode text")])
    ex = [QueryExample("q1", "what?", S(("yes", 3), ("no", 1)), objects=("cat",),
                       attributes=(("black",),), caption="a cat", ocr_text="stop", split="test")]
    write_corpus(tmp_path / "c.jsonl", corpus)
    write_questions(tmp_path / "q.jsonl", ex)
    assert [(d.doc_id, d.raw_text) for d in read_corpus(tmp_path / "c.jsonl")] == \
        [(d.doc_id, d.raw_text) for d in corpus]
    assert read_questions(tmp_path / "q.jsonl") == ex
    assert example_from_json(example_to_json(ex[0])) == ex[0]


def test_read_questions_rejects_malformed(tmp_path):
    p = tmp_path / "q.jsonl"
    p.write_text('{"question_id": "a", "question": "x", "answers": []}\n')
    with pytest.raises(MalformedExampleError):
        read_questions(p)
    p.write_text('{"question_id": "a", "question": "x"}\n')
    with pytest.raises(MalformedExampleError):
        read_questions(p)
    p.write_text('{"question_id": "a", "question": "x", "answers": [{"answer": "y", "count": 1}]}\n' * 2)
    with pytest.raises(MalformedExampleError):
        read_questions(p)
    p.write_text("not json\n")
    with pytest.raises(ValueError):
        read_questions(p)
