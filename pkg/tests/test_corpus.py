import pytest
from hypothesis import given
from hypothesis import strategies as st

from al_seqtag.corpus import (CONLL2003, WORD_POS_TAG, WORD_TAG, Corpus, CorpusFormatError, Span,
                              SynthConfigError, SynthSpec, TagSet, Token, corpus_stats,
                              extract_spans, iob2_violations, parse_conll, parse_conll_lines,
                              serialize_conll, spans_to_tags, split_corpus, synth_corpus,
                              write_conll)
from conftest import make_sentence
from oracles import spans_direct


def test_parse_two_tokens():
    c = parse_conll_lines(["John NNP B-PER", "runs VBZ O", ""], WORD_POS_TAG)
    assert len(c) == 1
    s = c.sentences[0]
    assert len(s) == 2
    assert s.tags == ["B-PER", "O"]
    assert s.pos == ["NNP", "VBZ"]
    assert c.tagset.labels == ("O", "B-PER", "I-PER")


def test_docstart_block_is_skipped():
    lines = ["-DOCSTART- -X- -X- O", "", "EU NNP B-NP B-ORG", "rejects VBZ B-VP O", "",
             "-DOCSTART- -X- -X- O", "", "Peter NNP B-NP B-PER", ""]
    c = parse_conll_lines(lines, CONLL2003, "IOB1")
    assert [s.words for s in c.sentences] == [["EU", "rejects"], ["Peter"]]
    assert [s.id for s in c.sentences] == [0, 1]
    assert c.tagset.scheme == "IOB1"


def test_docstart_only_gives_empty_corpus():
    c = parse_conll_lines(["-DOCSTART- -X- O", ""], WORD_POS_TAG)
    assert len(c) == 0 and c.token_count == 0


def test_wrong_column_count_names_line():
    with pytest.raises(CorpusFormatError, match="line 1") as exc:
        parse_conll_lines(["John B-PER"], WORD_POS_TAG)
    assert exc.value.line == 1


def test_unknown_prefix():
    with pytest.raises(CorpusFormatError, match="line 2.*prefix"):
        parse_conll_lines(["a O", "b X-PER"], WORD_TAG)


def test_no_trailing_blank_line():
    c = parse_conll_lines(["a O", "b B-LOC"], WORD_TAG)
    assert len(c) == 1 and c.sentences[0].tags == ["O", "B-LOC"]


def test_parse_file_roundtrip(tmp_path):
    c = synth_corpus(SynthSpec(size=40, seed=1, vocab_size=200))
    p = tmp_path / "c.txt"
    write_conll(c, p)
    again = parse_conll(p, WORD_TAG)
    assert again.sentences == c.sentences
    assert again.token_count == c.token_count
    assert serialize_conll(again) == p.read_text()


def test_pos_roundtrip():
    c = parse_conll_lines(["John NNP B-PER", "Smith NNP I-PER", "", "ok JJ O"], WORD_POS_TAG)
    again = parse_conll_lines(serialize_conll(c).splitlines(), WORD_POS_TAG)
    assert again == c


@pytest.mark.parametrize("tags,scheme,expected", [
    (["B-PER", "I-PER", "O", "B-LOC"], "IOB2", [("PER", 0, 1), ("LOC", 3, 3)]),
    (["I-PER", "I-PER", "B-PER", "I-PER"], "IOB1", [("PER", 0, 1), ("PER", 2, 3)]),
    (["O", "O", "O"], "IOB1", []),
    (["O", "O", "O"], "IOB2", []),
    (["O", "I-LOC", "I-LOC"], "IOB2", [("LOC", 1, 2)]),          # dangling I- repaired
    (["B-PER", "I-LOC"], "IOB2", [("PER", 0, 0), ("LOC", 1, 1)]),
    (["I-PER", "I-LOC", "O", "I-LOC"], "IOB1", [("PER", 0, 0), ("LOC", 1, 1), ("LOC", 3, 3)]),
])
def test_extract_spans_examples(tags, scheme, expected):
    assert extract_spans(tags, scheme) == [Span(*e) for e in expected]


def test_extract_spans_rejects_scheme():
    with pytest.raises(ValueError):
        extract_spans(["O"], "BIOES")


TYPES = st.sampled_from(["PER", "LOC", "ORG"])


@st.composite
def span_sets(draw):
    n = draw(st.integers(1, 15))
    spans, i = [], 0
    while i < n:
        if draw(st.booleans()):
            length = draw(st.integers(1, n - i))
            spans.append(Span(draw(TYPES), i, i + length - 1))
            i += length
        else:
            i += draw(st.integers(1, 2))
    return n, spans


@given(span_sets())
def test_spans_roundtrip_iob2(case):
    n, spans = case
    assert extract_spans(spans_to_tags(spans, n, "IOB2"), "IOB2") == spans


@given(span_sets())
def test_spans_roundtrip_iob1(case):
    n, spans = case
    tags = spans_to_tags(spans, n, "IOB1")
    assert extract_spans(tags, "IOB1") == spans
    # IOB1 only uses B- right after a same-type span
    for i, t in enumerate(tags):
        if t.startswith("B-"):
            assert i > 0 and tags[i - 1][2:] == t[2:]


LABELS = st.sampled_from(["O", "B-PER", "I-PER", "B-LOC", "I-LOC"])


@given(st.lists(LABELS, min_size=1, max_size=20))
def test_spans_sorted_nonoverlapping_and_match_oracle(tags):
    spans = extract_spans(tags, "IOB2")
    for a, b in zip(spans, spans[1:]):
        assert a.end < b.start
    for s in spans:
        assert 0 <= s.start <= s.end < len(tags)
    assert [(s.entity_type, s.start, s.end + 1) for s in spans] == spans_direct(tags)


def test_iob2_violations():
    assert iob2_violations(["O", "I-PER", "B-LOC", "I-LOC", "I-PER"]) == [1, 4]
    assert iob2_violations(["B-PER", "I-PER"]) == []


def test_tagset():
    ts = TagSet.from_types(["PER", "LOC"])
    assert ts.labels == ("O", "B-LOC", "I-LOC", "B-PER", "I-PER")
    assert ts.entity_types == ("LOC", "PER")
    assert list(ts.encode(["O", "I-PER"])) == [0, 4]
    assert ts.decode([3, 0]) == ["B-PER", "O"]
    with pytest.raises(ValueError):
        TagSet(("B-PER",))
    with pytest.raises(ValueError):
        TagSet(("O", "X-PER"))
    with pytest.raises(ValueError):
        TagSet(("O",), "IOB3")


def test_token_and_sentence_invariants():
    with pytest.raises(ValueError):
        Token("")
    s = make_sentence(3, ["a", "b"], ["O", "B-PER"])
    m = s.masked()
    assert m.words == s.words and m.id == 3
    with pytest.raises(LookupError):
        m.tags
    assert m.with_tags(["O", "O"]).tags == ["O", "O"]


def test_corpus_invariants(tagset3):
    s = make_sentence(0, ["a", "b"], ["O", "O"])
    with pytest.raises(ValueError):
        Corpus((s, s), tagset3)
    with pytest.raises(ValueError):
        Corpus((s,), tagset3, token_count=5)
    assert Corpus((s,), tagset3).token_count == 2


def test_synth_deterministic():
    a = synth_corpus(SynthSpec(size=100, seed=7))
    b = synth_corpus(SynthSpec(size=100, seed=7))
    assert serialize_conll(a) == serialize_conll(b)
    assert serialize_conll(a) != serialize_conll(synth_corpus(SynthSpec(size=100, seed=8)))


def test_synth_all_types_present():
    c = synth_corpus(SynthSpec(size=2000, n_types=5, seed=7))
    stats = corpus_stats(c)
    assert len(stats["entities"]) == 5
    assert all(v >= 1 for v in stats["entities"].values())
    assert c.tagset.scheme == "IOB2"


def test_synth_length_range():
    c = synth_corpus(SynthSpec(size=50, length_range=(1, 1), seed=0))
    assert all(len(s) == 1 for s in c.sentences)


def test_synth_errors():
    with pytest.raises(SynthConfigError):
        synth_corpus(SynthSpec(vocab_size=3, n_types=5))
    with pytest.raises(SynthConfigError):
        synth_corpus(SynthSpec(size=0))


def test_split_corpus_renumbers():
    c = synth_corpus(SynthSpec(size=30, seed=2))
    a, b = split_corpus(c, 20)
    assert [s.id for s in a.sentences] == list(range(20))
    assert [s.id for s in b.sentences] == list(range(10))
    assert a.token_count + b.token_count == c.token_count
