"""Hand-built reference markets.

``example_market`` is the five-hospital, two-couple market used throughout the
tests.  Doctor ``d_k`` has id ``k - 1`` and hospital ``h_k`` has id ``k - 1``;
couple 0 is (d6, d7) and couple 1 is (d8, d9).  Single d2 also lists a sixth
hospital that has no tabulated ranking, so that entry is dropped.
"""

from __future__ import annotations

from .market import Couple, Hospital, Market, Single


def _d(*names: int) -> list[int]:
    return [k - 1 for k in names]


def example_market() -> Market:
    singles_prefs = {
        1: [1, 2, 3, 4, 5],
        2: [1, 2, 3, 5],
        3: [1, 2, 3, 4, 5],
        4: [3, 5, 1, 4, 2],
        5: [3, 5, 1, 2, 4],
    }
    couples_prefs = {
        (6, 7): [(1, 2), (2, 1), (3, 4), (4, 5), (5, 5)],
        (8, 9): [(1, 1), (2, 2), (3, 4), (4, 3), (4, 2)],
    }
    rankings = {
        1: [1, 8, 9, 2, 5, 3, 6, 4, 7],
        2: [1, 8, 9, 2, 5, 3, 6, 4, 7],
        3: [1, 8, 9, 3, 6, 2, 5, 7, 4],
        4: [1, 8, 9, 3, 5, 4, 6, 2, 7],
        5: [1, 8, 9, 6, 4, 2, 5, 7, 3],
    }
    hospitals = [Hospital.from_ranking(h - 1, 2, _d(*rankings[h])) for h in sorted(rankings)]
    singles = [Single(d - 1, tuple(_d(*p))) for d, p in sorted(singles_prefs.items())]
    couples = [
        Couple(f - 1, m - 1, tuple((a - 1, b - 1) for a, b in prefs))
        for (f, m), prefs in couples_prefs.items()
    ]
    return Market(hospitals, singles, couples, {"name": "example-1"})
