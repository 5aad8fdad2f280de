"""Column-format corpora, IOB tag schemes and synthetic corpus generation."""

from __future__ import annotations

import io
import os
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

DOCSTART = "-DOCSTART-"
SCHEMES = ("IOB1", "IOB2")


class CorpusFormatError(ValueError):
    """Raised for malformed column files; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SynthConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Token:
    surface: str
    gold_tag: str | None = None
    pos: str | None = None

    def __post_init__(self):
        if not self.surface:
            raise ValueError("token surface must be non-empty")


@dataclass(frozen=True)
class Sentence:
    id: int
    tokens: tuple[Token, ...]

    def __post_init__(self):
        if len(self.tokens) == 0:
            raise ValueError(f"sentence {self.id} is empty")

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def words(self) -> list[str]:
        return [t.surface for t in self.tokens]

    @property
    def pos(self) -> list[str | None]:
        return [t.pos for t in self.tokens]

    @property
    def tags(self) -> list[str]:
        tags = [t.gold_tag for t in self.tokens]
        if any(t is None for t in tags):
            raise LookupError(f"sentence {self.id} carries no gold tags")
        return tags  # type: ignore[return-value]

    def masked(self) -> "Sentence":
        """Copy with gold tags removed, as handed to pool scoring."""
        return Sentence(self.id, tuple(replace(t, gold_tag=None) for t in self.tokens))

    def with_tags(self, tags: Sequence[str]) -> "Sentence":
        if len(tags) != len(self.tokens):
            raise ValueError("tag sequence length differs from sentence length")
        return Sentence(self.id, tuple(replace(t, gold_tag=g) for t, g in zip(self.tokens, tags)))


@dataclass(frozen=True)
class TagSet:
    labels: tuple[str, ...]
    scheme: str = "IOB2"

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown tag scheme {self.scheme!r}")
        if "O" not in self.labels:
            raise ValueError("tag set must contain 'O'")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("duplicate labels in tag set")
        for lab in self.labels:
            if lab != "O" and not (lab[:2] in ("B-", "I-") and len(lab) > 2):
                raise ValueError(f"invalid tag label {lab!r}")

    @classmethod
    def from_types(cls, types: Iterable[str], scheme: str = "IOB2") -> "TagSet":
        labels = ["O"]
        for t in sorted(set(types)):
            labels += [f"B-{t}", f"I-{t}"]
        return cls(tuple(labels), scheme)

    @classmethod
    def from_labels(cls, labels: Iterable[str], scheme: str = "IOB2") -> "TagSet":
        types = {lab[2:] for lab in labels if lab != "O"}
        return cls.from_types(types, scheme)

    @property
    def entity_types(self) -> tuple[str, ...]:
        return tuple(sorted({lab[2:] for lab in self.labels if lab != "O"}))

    @property
    def size(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        return self._index[label]

    @property
    def _index(self) -> dict[str, int]:
        # cached lazily; dataclass is frozen so go through __dict__
        idx = self.__dict__.get("_idx_cache")
        if idx is None:
            idx = {lab: i for i, lab in enumerate(self.labels)}
            object.__setattr__(self, "_idx_cache", idx)
        return idx

    def encode(self, tags: Sequence[str]) -> np.ndarray:
        return np.array([self._index[t] for t in tags], dtype=np.int64)

    def decode(self, indices: Iterable[int]) -> list[str]:
        return [self.labels[int(i)] for i in indices]


@dataclass(frozen=True)
class Span:
    entity_type: str
    start: int
    end: int


@dataclass(frozen=True)
class Corpus:
    sentences: tuple[Sentence, ...]
    tagset: TagSet
    token_count: int = field(default=-1)

    def __post_init__(self):
        total = sum(len(s) for s in self.sentences)
        if self.token_count == -1:
            object.__setattr__(self, "token_count", total)
        elif self.token_count != total:
            raise ValueError("token_count disagrees with sentences")
        ids = [s.id for s in self.sentences]
        if len(set(ids)) != len(ids):
            raise ValueError("sentence ids must be unique")

    def __len__(self) -> int:
        return len(self.sentences)

    def subset(self, ids: Iterable[int]) -> "Corpus":
        by_id = {s.id: s for s in self.sentences}
        return Corpus(tuple(by_id[i] for i in ids), self.tagset)


@dataclass(frozen=True)
class ColumnMap:
    """Which whitespace-separated columns hold surface, POS and tag.

    ``width`` is the exact column count every token line must have.
    """

    surface: int = 0
    tag: int = -1
    pos: int | None = None
    width: int = 2


CONLL2003 = ColumnMap(surface=0, pos=1, tag=3, width=4)
WORD_POS_TAG = ColumnMap(surface=0, pos=1, tag=2, width=3)
WORD_TAG = ColumnMap(surface=0, tag=1, width=2)


def _check_label(label: str, lineno: int) -> None:
    if label != "O" and not (label[:2] in ("B-", "I-") and len(label) > 2):
        raise CorpusFormatError(f"unknown tag prefix in {label!r}", lineno)


def parse_conll_lines(lines: Iterable[str], column_map: ColumnMap = WORD_TAG,
                      scheme: str = "IOB2") -> Corpus:
    sentences: list[Sentence] = []
    labels: set[str] = set()
    current: list[Token] = []

    def flush():
        nonlocal current
        if current:
            sentences.append(Sentence(len(sentences), tuple(current)))
        current = []

    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            flush()
            continue
        cols = line.split()
        if cols[0] == DOCSTART:
            flush()
            continue
        if len(cols) != column_map.width:
            raise CorpusFormatError(
                f"expected {column_map.width} columns, got {len(cols)}", lineno)
        tag = cols[column_map.tag]
        _check_label(tag, lineno)
        labels.add(tag)
        pos = cols[column_map.pos] if column_map.pos is not None else None
        current.append(Token(cols[column_map.surface], tag, pos))
    flush()
    labels.add("O")
    return Corpus(tuple(sentences), TagSet.from_labels(labels, scheme))


def parse_conll(path: str | os.PathLike, column_map: ColumnMap = WORD_TAG,
                scheme: str = "IOB2") -> Corpus:
    """Read a blank-line separated column file. ``-DOCSTART-`` lines are skipped."""
    with open(path, encoding="utf-8") as fh:
        return parse_conll_lines(fh, column_map, scheme)


def serialize_conll(corpus: Corpus) -> str:
    """Inverse of :func:`parse_conll` for ``WORD_POS_TAG`` / ``WORD_TAG`` layouts."""
    out = io.StringIO()
    for sent in corpus.sentences:
        for tok in sent.tokens:
            if tok.gold_tag is None:
                raise ValueError(f"sentence {sent.id} has untagged tokens")
            cols = [tok.surface] + ([tok.pos] if tok.pos is not None else []) + [tok.gold_tag]
            out.write(" ".join(cols) + "\n")
        out.write("\n")
    return out.getvalue()


def column_map_for(corpus: Corpus) -> ColumnMap:
    has_pos = any(t.pos is not None for s in corpus.sentences for t in s.tokens)
    return WORD_POS_TAG if has_pos else WORD_TAG


def write_conll(corpus: Corpus, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_conll(corpus))


def extract_spans(tags: Sequence[str], scheme: str = "IOB2") -> list[Span]:
    """Entity spans of a tag sequence.

    A dangling ``I-X`` (no open span of type X) opens a new span under both
    schemes. Under IOB1, ``B-X`` only starts a new span when it directly
    follows a span of the same type; otherwise it behaves like ``I-X``.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown tag scheme {scheme!r}")
    spans: list[Span] = []
    cur_type: str | None = None
    start = 0
    for i, tag in enumerate(tags):
        if tag == "O":
            if cur_type is not None:
                spans.append(Span(cur_type, start, i - 1))
            cur_type = None
            continue
        prefix, etype = tag[:2], tag[2:]
        # B-X always starts a span; in IOB1 it can only legally appear right
        # after a same-type span, elsewhere it is read leniently the same way
        opens = prefix == "B-" or cur_type != etype
        if opens:
            if cur_type is not None:
                spans.append(Span(cur_type, start, i - 1))
            cur_type, start = etype, i
    if cur_type is not None:
        spans.append(Span(cur_type, start, len(tags) - 1))
    return spans


def spans_to_tags(spans: Iterable[Span], length: int, scheme: str = "IOB2") -> list[str]:
    tags = ["O"] * length
    ordered = sorted(spans, key=lambda s: s.start)
    prev_end, prev_type = -2, None
    for sp in ordered:
        if scheme == "IOB2":
            first = "B-"
        else:
            first = "B-" if (prev_end == sp.start - 1 and prev_type == sp.entity_type) else "I-"
        tags[sp.start] = first + sp.entity_type
        for j in range(sp.start + 1, sp.end + 1):
            tags[j] = "I-" + sp.entity_type
        prev_end, prev_type = sp.end, sp.entity_type
    return tags


def iob2_violations(tags: Sequence[str]) -> list[int]:
    """Positions of ``I-X`` tags not preceded by ``B-X``/``I-X``."""
    bad = []
    prev = "O"
    for i, tag in enumerate(tags):
        if tag.startswith("I-") and (prev == "O" or prev[2:] != tag[2:]):
            bad.append(i)
        prev = tag
    return bad


# -- synthetic corpora -------------------------------------------------------

_CONSONANTS = "bcdfghklmnprstvz"
_VOWELS = "aeiou"


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of a synthetic NER-like corpus.

    Entity words come from per-type lexicons drawn with Zipfian frequency, a
    share of lexicon entries is ambiguous between two types (resolved by a
    preceding trigger word when present) and a small fraction of mentions is
    mislabeled, so the task is learnable but not trivially so.
    """

    n_types: int = 5
    vocab_size: int = 3000
    length_range: tuple[int, int] = (4, 20)
    size: int = 2000
    seed: int = 0
    entity_rate: float = 0.12
    empty_rate: float = 0.45
    ambiguity: float = 0.15
    label_noise: float = 0.03

    def validate(self) -> None:
        if self.size < 1:
            raise SynthConfigError("size must be >= 1")
        if self.n_types < 1:
            raise SynthConfigError("need at least one entity type")
        if self.vocab_size < self.n_types:
            raise SynthConfigError("vocabulary smaller than the number of entity types")
        lo, hi = self.length_range
        if lo < 1 or hi < lo:
            raise SynthConfigError(f"bad sentence-length range {self.length_range}")


_TYPE_NAMES = ("PER", "LOC", "ORG", "MISC", "DATE", "GPE", "NORP", "FAC", "EVENT", "LAW")


def _make_words(rng: np.random.Generator, count: int) -> list[str]:
    words: list[str] = []
    seen: set[str] = set()
    while len(words) < count:
        n_syl = int(rng.integers(1, 4))
        w = "".join(_CONSONANTS[rng.integers(len(_CONSONANTS))] + _VOWELS[rng.integers(len(_VOWELS))]
                    for _ in range(n_syl))
        if rng.random() < 0.5:
            w += _CONSONANTS[rng.integers(len(_CONSONANTS))]
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


def _zipf_probs(n: int, a: float = 1.1) -> np.ndarray:
    p = 1.0 / np.arange(1, n + 1) ** a
    return p / p.sum()


def synth_corpus(spec: SynthSpec) -> Corpus:
    """Deterministic synthetic IOB2 corpus for ``spec``."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    types = [_TYPE_NAMES[i] if i < len(_TYPE_NAMES) else f"T{i}" for i in range(spec.n_types)]

    n_trigger = 2 * spec.n_types
    n_entity = max(spec.n_types, int(spec.vocab_size * 0.4))
    n_filler = max(1, spec.vocab_size - n_entity - n_trigger)
    words = _make_words(rng, n_filler + n_entity + n_trigger)
    filler = words[:n_filler]
    entity_words = words[n_filler:n_filler + n_entity]
    triggers = [words[n_filler + n_entity + 2 * k: n_filler + n_entity + 2 * k + 2]
                for k in range(spec.n_types)]

    # lexicon entry -> primary type, and optionally an alternative type
    primary = np.arange(n_entity) % spec.n_types
    rng.shuffle(primary)
    alt = np.full(n_entity, -1)
    if spec.n_types > 1:
        amb = rng.random(n_entity) < spec.ambiguity
        shift = rng.integers(1, spec.n_types, size=n_entity)
        alt[amb] = (primary[amb] + shift[amb]) % spec.n_types
    lexicons = [np.flatnonzero(primary == t) for t in range(spec.n_types)]
    lex_probs = [_zipf_probs(len(lx)) for lx in lexicons]
    filler_probs = _zipf_probs(n_filler, 1.0)
    # some entity types are rarer than others
    type_probs = _zipf_probs(spec.n_types, 0.7)

    sentences = []
    lo, hi = spec.length_range
    for sid in range(spec.size):
        n = int(rng.integers(lo, hi + 1))
        has_entities = rng.random() >= spec.empty_rate
        toks: list[Token] = []
        while len(toks) < n:
            room = n - len(toks)
            if has_entities and rng.random() < spec.entity_rate * 2:
                t = int(rng.choice(spec.n_types, p=type_probs))
                length = int(min(room, 1 + rng.binomial(2, 0.3)))
                use_trigger = room > length and rng.random() < 0.5
                mention = [int(lexicons[t][rng.choice(len(lexicons[t]), p=lex_probs[t])])
                           for _ in range(length)]
                label_type = t
                if use_trigger:
                    # trigger decides the reading of an ambiguous head word
                    trig_t = t
                    if alt[mention[0]] >= 0 and rng.random() < 0.5:
                        trig_t = int(alt[mention[0]])
                        label_type = trig_t
                    tw = triggers[trig_t][int(rng.integers(2))]
                    toks.append(Token(tw, "O"))
                elif alt[mention[0]] >= 0 and rng.random() < 0.3:
                    label_type = int(alt[mention[0]])
                if rng.random() < spec.label_noise:
                    label_type = int(rng.integers(spec.n_types))
                name = types[label_type]
                for k, w in enumerate(mention):
                    surface = entity_words[w]
                    if rng.random() < 0.85:
                        surface = surface.capitalize()
                    toks.append(Token(surface, ("B-" if k == 0 else "I-") + name))
            else:
                w = filler[int(rng.choice(n_filler, p=filler_probs))]
                if not toks and rng.random() < 0.3:
                    w = w.capitalize()
                if rng.random() < 0.03:
                    w = str(int(rng.integers(1, 3000)))
                toks.append(Token(w, "O"))
        sentences.append(Sentence(sid, tuple(toks[:n])))
    return Corpus(tuple(sentences), TagSet.from_types(types, "IOB2"))


def split_corpus(corpus: Corpus, n_first: int) -> tuple[Corpus, Corpus]:
    """Split into the first ``n_first`` sentences and the rest, renumbering ids from 0."""
    def renum(sents):
        return Corpus(tuple(Sentence(i, s.tokens) for i, s in enumerate(sents)), corpus.tagset)
    return renum(corpus.sentences[:n_first]), renum(corpus.sentences[n_first:])


def corpus_stats(corpus: Corpus) -> dict:
    per_type: dict[str, int] = {t: 0 for t in corpus.tagset.entity_types}
    for s in corpus.sentences:
        for sp in extract_spans(s.tags, corpus.tagset.scheme):
            per_type[sp.entity_type] = per_type.get(sp.entity_type, 0) + 1
    return {
        "sentences": len(corpus),
        "tokens": corpus.token_count,
        "entities": per_type,
    }
