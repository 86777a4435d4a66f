"""Market model for many-to-one matching markets with couples.

Doctors (singles and couple members) share one dense id space starting at 0,
hospitals have their own.  A hospital's preferences are stored as a ``rank``
vector indexed by doctor id where a lower value means more preferred; the
values only need to be distinct, so hand-built markets use positions and
generated markets may use random keys.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

import numpy as np

MARKET_FORMAT = "soda-market/1"
MATCHING_FORMAT = "soda-matching/1"


class MarketError(ValueError):
    """Malformed market, matching or query."""


@dataclass(eq=False)
class Hospital:
    id: int
    capacity: int
    rank: np.ndarray

    @classmethod
    def from_ranking(cls, id: int, capacity: int, ranking: Sequence[int]) -> "Hospital":
        """Build from a best-first list of doctor ids covering all doctors."""
        rank = np.full(len(ranking), -1, dtype=np.int64)
        for pos, d in enumerate(ranking):
            if not 0 <= d < len(ranking) or rank[d] != -1:
                raise MarketError(f"hospital {id}: ranking is not a permutation of doctor ids")
            rank[d] = pos
        return cls(id, capacity, rank)

    @property
    def ranking(self) -> list[int]:
        return np.argsort(self.rank, kind="stable").tolist()

    def prefers(self, a: int, b: int) -> bool:
        return self.rank[a] < self.rank[b]


@dataclass(eq=False)
class Single:
    id: int
    prefs: tuple[int, ...]


@dataclass(eq=False)
class Couple:
    first: int
    second: int
    prefs: tuple[tuple[int, int], ...]

    @property
    def members(self) -> tuple[int, int]:
        return (self.first, self.second)


class Market:
    """Hospitals, singles and couples plus optional generation metadata."""

    def __init__(
        self,
        hospitals: Sequence[Hospital],
        singles: Sequence[Single],
        couples: Sequence[Couple] = (),
        params: dict | None = None,
    ):
        self.hospitals = list(hospitals)
        self.singles = list(singles)
        self.couples = list(couples)
        self.params = dict(params or {})
        self.n_doctors = len(self.singles) + 2 * len(self.couples)
        self.single_index = {s.id: i for i, s in enumerate(self.singles)}
        self.couple_of: dict[int, int] = {}
        for ci, c in enumerate(self.couples):
            self.couple_of[c.first] = ci
            self.couple_of[c.second] = ci
        self.validate()

    def validate(self) -> None:
        n_h = len(self.hospitals)
        ids = [s.id for s in self.singles]
        for c in self.couples:
            if c.first == c.second:
                raise MarketError(f"couple ({c.first}, {c.second}) has identical members")
            ids.extend(c.members)
        if sorted(ids) != list(range(self.n_doctors)):
            raise MarketError("doctor ids must be distinct and dense from 0")
        if [h.id for h in self.hospitals] != list(range(n_h)):
            raise MarketError("hospital ids must be dense from 0 in order")
        if n_h and sum(h.capacity for h in self.hospitals) < 1:
            raise MarketError("total capacity must be at least 1")
        for h in self.hospitals:
            if h.capacity < 1:
                raise MarketError(f"hospital {h.id}: capacity must be >= 1")
            if len(h.rank) != self.n_doctors:
                raise MarketError(f"hospital {h.id}: ranking must cover all {self.n_doctors} doctors")
        for s in self.singles:
            if len(set(s.prefs)) != len(s.prefs):
                raise MarketError(f"single {s.id}: repeated hospital in preferences")
            if s.prefs and (min(s.prefs) < 0 or max(s.prefs) >= n_h):
                raise MarketError(f"single {s.id}: unknown hospital in preferences")
        for ci, c in enumerate(self.couples):
            if len(set(c.prefs)) != len(c.prefs):
                raise MarketError(f"couple {ci}: repeated pair in preferences")
            flat = [h for pair in c.prefs for h in pair]
            if any(len(pair) != 2 for pair in c.prefs) or (flat and (min(flat) < 0 or max(flat) >= n_h)):
                raise MarketError(f"couple {ci}: unknown hospital in preferences")

    def is_single(self, d: int) -> bool:
        return d in self.single_index

    def to_dict(self) -> dict:
        return {
            "format": MARKET_FORMAT,
            "hospitals": [
                {"id": h.id, "capacity": h.capacity, "ranking": h.ranking} for h in self.hospitals
            ],
            "singles": [{"id": s.id, "prefs": list(s.prefs)} for s in self.singles],
            "couples": [
                {"first": c.first, "second": c.second, "prefs": [list(p) for p in c.prefs]}
                for c in self.couples
            ],
            "params": self.params,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Market":
        if not isinstance(data, dict):
            raise MarketError("market file must hold a JSON object")
        if data.get("format") != MARKET_FORMAT:
            raise MarketError(f"unsupported market format {data.get('format')!r}")
        try:
            hospitals = [
                Hospital.from_ranking(int(h["id"]), int(h["capacity"]), [int(d) for d in h["ranking"]])
                for h in data["hospitals"]
            ]
            singles = [Single(int(s["id"]), tuple(int(h) for h in s["prefs"])) for s in data["singles"]]
            couples = [
                Couple(int(c["first"]), int(c["second"]), tuple((int(a), int(b)) for a, b in c["prefs"]))
                for c in data.get("couples", [])
            ]
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, MarketError):
                raise
            raise MarketError(f"malformed market entry: {exc!r}") from exc
        return cls(hospitals, singles, couples, data.get("params"))


Pair = tuple[int, int]


@dataclass
class Matching:
    """Assignment of singles to hospitals and couples to hospital pairs.

    ``None`` is the unassigned sentinel for both singles and couples.
    """

    singles: dict[int, int | None]
    couples: list[Pair | None]
    rosters: dict[int, set[int]] = field(default_factory=dict)

    @classmethod
    def build(
        cls, market: Market, singles: dict[int, int | None], couples: Sequence[Pair | None]
    ) -> "Matching":
        rosters: dict[int, set[int]] = {h.id: set() for h in market.hospitals}
        for s, h in singles.items():
            if h is not None:
                rosters.setdefault(h, set()).add(s)
        for ci, pair in enumerate(couples):
            if pair is not None:
                c = market.couples[ci]
                rosters.setdefault(pair[0], set()).add(c.first)
                rosters.setdefault(pair[1], set()).add(c.second)
        return cls(dict(singles), list(couples), rosters)

    @classmethod
    def empty(cls, market: Market) -> "Matching":
        return cls.build(market, {s.id: None for s in market.singles}, [None] * len(market.couples))

    def to_dict(self) -> dict:
        return {
            "format": MATCHING_FORMAT,
            "singles": {str(s): h for s, h in sorted(self.singles.items())},
            "couples": [{"pair": None if p is None else list(p)} for p in self.couples],
        }

    @classmethod
    def from_dict(cls, market: Market, data: dict) -> "Matching":
        if not isinstance(data, dict) or data.get("format") != MATCHING_FORMAT:
            raise MarketError("matching file must be a soda-matching/1 object")
        try:
            singles = {int(s): (None if h is None else int(h)) for s, h in data["singles"].items()}
            couples = [
                None if c["pair"] is None else (int(c["pair"][0]), int(c["pair"][1]))
                for c in data["couples"]
            ]
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise MarketError(f"malformed matching entry: {exc!r}") from exc
        return cls.build(market, singles, couples)

    def same_assignment(self, other: "Matching") -> bool:
        return self.singles == other.singles and self.couples == other.couples


# -- choice function ---------------------------------------------------------


def choice(hospital: Hospital, applicants: Iterable[int]) -> set[int]:
    """The min(|applicants|, k) applicants the hospital ranks highest."""
    applicants = set(applicants)
    n = len(hospital.rank)
    for d in applicants:
        if not (isinstance(d, (int, np.integer)) and 0 <= d < n):
            raise MarketError(f"unknown doctor id {d!r}")
    if len(applicants) <= hospital.capacity:
        return applicants
    ordered = sorted(applicants, key=hospital.rank.__getitem__)
    return set(ordered[: hospital.capacity])


def accepts(hospital: Hospital, roster: Iterable[int], d: int) -> bool:
    """Whether ``d`` is in the hospital's choice from ``roster | {d}``."""
    roster = set(roster)
    if d in roster or len(roster) < hospital.capacity:
        return True
    rank = hospital.rank
    better = sum(1 for x in roster if rank[x] < rank[d])
    return better < hospital.capacity


def accepts_both(hospital: Hospital, roster: Iterable[int], pair: tuple[int, int]) -> bool:
    """Whether both doctors are in the hospital's choice from ``roster | pair``."""
    chosen = choice(hospital, set(roster) | set(pair))
    return pair[0] in chosen and pair[1] in chosen


# -- blocks and stability ----------------------------------------------------


@dataclass(frozen=True)
class SingleBlock:
    single: int
    hospital: int


@dataclass(frozen=True)
class CoupleSplitBlock:
    couple: int
    hospital: int
    hospital2: int


@dataclass(frozen=True)
class CoupleJointBlock:
    couple: int
    hospital: int


Block = Union[SingleBlock, CoupleSplitBlock, CoupleJointBlock]


@dataclass(frozen=True)
class Violation:
    kind: str
    where: str
    detail: str


def validate_matching(market: Market, mu: Matching) -> list[Violation]:
    """Report every broken matching invariant; an empty list means valid."""
    out: list[Violation] = []
    n_h = len(market.hospitals)

    def bad_h(h) -> bool:
        return not (isinstance(h, (int, np.integer)) and 0 <= h < n_h)

    for s in market.singles:
        if s.id not in mu.singles:
            out.append(Violation("missing", f"single {s.id}", "no assignment entry"))
    for s, h in mu.singles.items():
        if not market.is_single(s):
            out.append(Violation("unknown", f"single {s}", "not a single doctor of the market"))
        elif h is not None and bad_h(h):
            out.append(Violation("unknown", f"single {s}", f"unknown hospital {h}"))
    if len(mu.couples) != len(market.couples):
        out.append(
            Violation("missing", "couples", f"{len(mu.couples)} entries for {len(market.couples)} couples")
        )
    for ci, pair in enumerate(mu.couples[: len(market.couples)]):
        if pair is not None and (len(pair) != 2 or bad_h(pair[0]) or bad_h(pair[1])):
            out.append(Violation("unknown", f"couple {ci}", f"bad pair {pair!r}"))

    seen: dict[int, int] = {}
    for h, roster in sorted(mu.rosters.items()):
        if bad_h(h):
            out.append(Violation("unknown", f"roster {h}", "unknown hospital"))
            continue
        if len(roster) > market.hospitals[h].capacity:
            out.append(
                Violation("capacity", f"hospital {h}", f"{len(roster)} > {market.hospitals[h].capacity}")
            )
        for d in sorted(roster):
            if not 0 <= d < market.n_doctors:
                out.append(Violation("unknown", f"hospital {h}", f"unknown doctor {d}"))
                continue
            if d in seen:
                out.append(Violation("duplicate", f"doctor {d}", f"on rosters {seen[d]} and {h}"))
            seen[d] = h

    # (i) s in roster(h) iff mu(s) = h
    for s, h in mu.singles.items():
        if not market.is_single(s) or (h is not None and bad_h(h)):
            continue
        if h is not None and s not in mu.rosters.get(h, ()):
            out.append(Violation("consistency", f"single {s}", f"assigned to {h} but not on its roster"))
    for h, roster in mu.rosters.items():
        for d in roster:
            if market.is_single(d) and mu.singles.get(d) != h:
                out.append(
                    Violation("consistency", f"hospital {h}", f"single {d} on roster but assigned elsewhere")
                )
    # (ii) mu(c) = (h, h') iff f in roster(h) and m in roster(h')
    for ci, c in enumerate(market.couples):
        pair = mu.couples[ci] if ci < len(mu.couples) else None
        where_f = seen.get(c.first)
        where_m = seen.get(c.second)
        if pair is None:
            if where_f is not None or where_m is not None:
                out.append(Violation("consistency", f"couple {ci}", "unassigned but a member is on a roster"))
        elif (where_f, where_m) != tuple(pair):
            out.append(
                Violation(
                    "consistency", f"couple {ci}", f"pair {tuple(pair)} but members at {(where_f, where_m)}"
                )
            )
    return out


def _check(market: Market, mu: Matching) -> None:
    problems = validate_matching(market, mu)
    if problems:
        p = problems[0]
        raise MarketError(f"invalid matching: {p.kind} at {p.where}: {p.detail}")


def find_blocks(market: Market, mu: Matching) -> list[Block]:
    """All blocks of the matching: singles by id then hospital, couples by
    index then pair.

    Only listed hospitals and pairs count; unassigned ranks below every
    listed option.
    """
    _check(market, mu)
    H = market.hospitals
    roster = mu.rosters
    blocks: list[Block] = []
    for s in sorted(market.singles, key=lambda s: s.id):
        current = mu.singles.get(s.id)
        found = []
        for h in s.prefs:
            if h == current:
                break
            if accepts(H[h], roster[h], s.id):
                found.append(h)
        blocks.extend(SingleBlock(s.id, h) for h in sorted(found))
    for ci, c in enumerate(market.couples):
        current = mu.couples[ci]
        found = []
        for pair in c.prefs:
            if current is not None and pair == tuple(current):
                break
            h, h2 = pair
            if h == h2:
                if accepts_both(H[h], roster[h], c.members):
                    found.append(CoupleJointBlock(ci, h))
            elif accepts(H[h], roster[h], c.first) and accepts(H[h2], roster[h2], c.second):
                found.append(CoupleSplitBlock(ci, h, h2))
        found.sort(key=lambda b: (b.hospital, getattr(b, "hospital2", b.hospital)))
        blocks.extend(found)
    return blocks


def is_stable(market: Market, mu: Matching) -> bool:
    return not find_blocks(market, mu)


def rank_of_assignment(prefs: Sequence, assigned) -> int | None:
    """1-based position of ``assigned`` in ``prefs``; None when unassigned or unlisted."""
    if assigned is None:
        return None
    try:
        return list(prefs).index(tuple(assigned) if isinstance(assigned, list) else assigned) + 1
    except ValueError:
        return None
