import random

import pytest
from hypothesis import strategies as st

from sodamatch.fixtures import example_market
from sodamatch.market import Couple, Hospital, Market, Single


@pytest.fixture
def example():
    return example_market()


def random_market(rnd: random.Random, n_h=None, n_s=None, n_c=None, max_cap=2, full=False) -> Market:
    """Small random market with arbitrary (possibly short) lists."""
    n_h = rnd.randint(1, 4) if n_h is None else n_h
    n_s = rnd.randint(0, 4) if n_s is None else n_s
    n_c = rnd.randint(0, 2) if n_c is None else n_c
    D = n_s + 2 * n_c
    hospitals = []
    for h in range(n_h):
        ranking = list(range(D))
        rnd.shuffle(ranking)
        hospitals.append(Hospital.from_ranking(h, rnd.randint(1, max_cap), ranking))
    singles = []
    for s in range(n_s):
        prefs = list(range(n_h))
        rnd.shuffle(prefs)
        k = n_h if full else rnd.randint(0, n_h)
        singles.append(Single(s, tuple(prefs[:k])))
    couples = []
    pairs_all = [(a, b) for a in range(n_h) for b in range(n_h)]
    for c in range(n_c):
        pairs = pairs_all[:]
        rnd.shuffle(pairs)
        k = len(pairs) if full else rnd.randint(0, min(len(pairs), 6))
        couples.append(Couple(n_s + 2 * c, n_s + 2 * c + 1, tuple(pairs[:k])))
    return Market(hospitals, singles, couples)


@st.composite
def small_markets(draw, max_h=4, max_s=4, max_c=2, max_cap=2, full=False):
    seed = draw(st.integers(0, 2**32 - 1))
    rnd = random.Random(seed)
    n_h = draw(st.integers(1, max_h))
    n_s = draw(st.integers(0, max_s))
    n_c = draw(st.integers(0, max_c))
    return random_market(rnd, n_h, n_s, n_c, max_cap, full)


# one verdict line per acceptance criterion, shown after the test summary
VERDICTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
