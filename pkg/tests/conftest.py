from fractions import Fraction as F

import pytest

from ngram_transformer.ngram import Alphabet, NGramLM, random_lm

ACCEPTANCE_LINES = []


def bigram_fixture() -> NGramLM:
    """p(.|BOS) = (1/2, 1/4, 1/4), p(.|a) = (1/3, 1/3, 1/3), p(.|b) = (0, 1/2, 1/2) over (a, b, EOS)."""
    ab = Alphabet(("a", "b"))
    return NGramLM(2, ab, {
        ("<bos>",): (F(1, 2), F(1, 4), F(1, 4)),
        ("a",): (F(1, 3), F(1, 3), F(1, 3)),
        ("b",): (F(0), F(1, 2), F(1, 2)),
    })


def trigram_fixture() -> NGramLM:
    return random_lm(3, Alphabet(("a", "b")), seed=11, max_denominator=20, zero_fraction=0.3)


def grid():
    """Orders 2..4, alphabets of size 1..3, five seeds each; about a quarter of transitions are zero."""
    out = []
    for n in (2, 3, 4):
        for k in (1, 2, 3):
            alphabet = Alphabet(tuple("abc"[:k]))
            for seed in range(5):
                out.append(random_lm(n, alphabet, seed=1000 * n + 10 * k + seed, max_denominator=50,
                                     zero_fraction=0.25))
    return out


@pytest.fixture
def bigram():
    return bigram_fixture()


@pytest.fixture
def trigram():
    return trigram_fixture()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
