import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from al_seqtag.corpus import Sentence, SynthSpec, TagSet, Token, synth_corpus, split_corpus  # noqa: E402


def make_sentence(sid, words, tags, pos=None):
    pos = pos or [None] * len(words)
    return Sentence(sid, tuple(Token(w, t, p) for w, t, p in zip(words, tags, pos)))


@pytest.fixture(scope="session")
def small_corpus():
    return synth_corpus(SynthSpec(size=240, seed=3, vocab_size=600))


@pytest.fixture(scope="session")
def small_pair(small_corpus):
    return split_corpus(small_corpus, 180)


@pytest.fixture
def tagset3():
    return TagSet.from_types(["LOC", "PER"], "IOB2")


# -- acceptance summary -------------------------------------------------------------

ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
