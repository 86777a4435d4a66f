"""Deferred acceptance and Sorted Deferred Acceptance (SoDA).

SoDA first runs doctor-proposing DA on the singles, then inserts couples one at
a time in the order of a permutation.  Whenever the chain of rejections set
off by an inserted couple would push out a member of an earlier couple, the
permutation is changed so that the inserting couple goes just ahead of the
victim and everything starts over.  Revisiting a permutation, or a couple
pushing out its own member, is a failure.
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .market import Market, MarketError, Matching

CLASSIC = "classic"
BACKWARD_EDGE = "backward-edge"
DIRECT = "direct"
MODES = (CLASSIC, BACKWARD_EDGE, DIRECT)

STABLE = "stable"
FAIL_SELF_EVICTION = "fail-self-eviction"
FAIL_PERMUTATION_EXHAUSTED = "fail-permutation-exhausted"
FAIL_CYCLE_DETECTED = "fail-cycle-detected"
FAIL_COUPLE_EVICTION = "fail-couple-eviction"

APPLICATION = "couple-application"
STABILIZE = "stabilize"


@dataclass(frozen=True)
class EvictionEvent:
    attempt: int
    evictor: int
    evicted: int
    hospital: int
    phase: str


@dataclass(frozen=True)
class Restart:
    attempt: int
    evictor: int
    victim: int
    permutation: tuple[int, ...]


@dataclass
class SodaOutcome:
    status: str
    permutation: tuple[int, ...]
    matching: Matching | None = None
    restarts: int = 0
    events: list[EvictionEvent] = field(default_factory=list)
    restart_log: list[Restart] = field(default_factory=list)
    tried: list[tuple[int, ...]] = field(default_factory=list)
    couple: int | None = None
    influenced: dict[int, set[int]] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == STABLE

    def trace_records(self) -> list[dict]:
        """Flat trace: one record per eviction and per restart, in run order."""
        records = []
        restarts = {r.attempt: r for r in self.restart_log}
        events = iter(self.events)
        pending = next(events, None)
        for attempt, pi in enumerate(self.tried):
            while pending is not None and pending.attempt == attempt:
                records.append(
                    {"step": len(records), "phase": pending.phase, "evictor": pending.evictor,
                     "evicted": pending.evicted, "hospital": pending.hospital, "permutation": list(pi)}
                )
                pending = next(events, None)
            if attempt in restarts:
                r = restarts[attempt]
                records.append(
                    {"step": len(records), "phase": "restart", "evictor": r.evictor, "evicted": r.victim,
                     "hospital": None, "permutation": list(r.permutation)}
                )
        return records


class SodaState:
    """Mutable tentative assignment used while running the engines."""

    def __init__(self, market: Market):
        self.rosters: list[list[int]] = [[] for _ in market.hospitals]
        self.where: list[int] = [-1] * market.n_doctors
        self.next_choice: list[int] = [0] * len(market.singles)
        self.couple_next: list[int] = [0] * len(market.couples)
        self.couple_pair: list[tuple[int, int] | None] = [None] * len(market.couples)

    def copy(self) -> "SodaState":
        new = SodaState.__new__(SodaState)
        new.rosters = [r[:] for r in self.rosters]
        new.where = self.where[:]
        new.next_choice = self.next_choice[:]
        new.couple_next = self.couple_next[:]
        new.couple_pair = self.couple_pair[:]
        return new

    def to_matching(self, market: Market) -> Matching:
        singles = {}
        for s in market.singles:
            h = self.where[s.id]
            singles[s.id] = None if h < 0 else h
        return Matching.build(market, singles, list(self.couple_pair))


# -- deferred acceptance -------------------------------------------------------


def _run_da(market: Market, rng: np.random.Generator | None = None) -> SodaState:
    st = SodaState(market)
    hospitals = market.hospitals
    singles = market.singles
    free = list(range(len(singles)))
    if rng is not None:
        rng.shuffle(free)
    queue = deque(free)
    while queue:
        if rng is not None and len(queue) > 1:
            k = int(rng.integers(len(queue)))
            queue[0], queue[k] = queue[k], queue[0]
        si = queue.popleft()
        s = singles[si]
        prefs = s.prefs
        ptr = st.next_choice[si]
        while ptr < len(prefs):
            h = prefs[ptr]
            ptr += 1
            roster = st.rosters[h]
            hosp = hospitals[h]
            if len(roster) < hosp.capacity:
                roster.append(s.id)
                st.where[s.id] = h
                break
            rank = hosp.rank
            worst = max(roster, key=rank.__getitem__)
            if rank[s.id] < rank[worst]:
                roster[roster.index(worst)] = s.id
                st.where[s.id] = h
                st.where[worst] = -1
                queue.append(market.single_index[worst])
                break
        st.next_choice[si] = ptr
    return st


def deferred_acceptance(market: Market, rng: np.random.Generator | None = None) -> Matching:
    """Doctor-proposing DA on the singles of ``market``; couples are ignored.

    ``rng`` randomises which free single proposes next.  The result does not
    depend on it.
    """
    return _run_da(market, rng).to_matching(market)


# -- SoDA ------------------------------------------------------------------------


def move_ahead(pi: Sequence[int], couple: int, victim: int) -> tuple[int, ...]:
    """Move ``couple`` to the slot of ``victim``, shifting the rest one later."""
    pi = list(pi)
    i, j = pi.index(couple), pi.index(victim)
    if j > i:
        raise ValueError("victim must precede the evicting couple")
    del pi[i]
    pi.insert(j, couple)
    return tuple(pi)


def constrained_order(base: Sequence[int], before: Iterable[tuple[int, int]]) -> tuple[int, ...] | None:
    """Order closest to ``base`` with every ``(a, b)`` having a ahead of b.

    Returns None when the constraints are cyclic.
    """
    pos = {c: i for i, c in enumerate(base)}
    succ: dict[int, list[int]] = {c: [] for c in base}
    indeg = {c: 0 for c in base}
    for a, b in set(before):
        succ[a].append(b)
        indeg[b] += 1
    heap = [(pos[c], c) for c in base if indeg[c] == 0]
    heapq.heapify(heap)
    out = []
    while heap:
        _, c = heapq.heappop(heap)
        out.append(c)
        for b in succ[c]:
            indeg[b] -= 1
            if indeg[b] == 0:
                heapq.heappush(heap, (pos[b], b))
    if len(out) != len(base):
        return None
    return tuple(out)


def _rejected(hosp, roster: list[int], newcomers: Sequence[int]) -> list[int]:
    pool = roster + list(newcomers)
    if len(pool) <= hosp.capacity:
        return []
    pool.sort(key=hosp.rank.__getitem__)
    return pool[hosp.capacity:]


def run_stabilize(
    market: Market,
    state: SodaState,
    displaced: deque,
    couple: int,
    events: list | None = None,
    influenced: dict | None = None,
    attempt: int = 0,
) -> tuple[str, int | None]:
    """Continue DA with the displaced singles after ``couple`` was placed.

    Returns ``("continue", None)``, ``("fail", couple)`` when a member of the
    placed couple is pushed out, or ``("reorder", victim)`` when a member of
    another couple is.
    """
    hospitals = market.hospitals
    couple_of = market.couple_of
    while displaced:
        d = displaced.popleft()
        si = market.single_index[d]
        prefs = market.singles[si].prefs
        ptr = state.next_choice[si]
        while ptr < len(prefs):
            h = prefs[ptr]
            ptr += 1
            roster = state.rosters[h]
            hosp = hospitals[h]
            if len(roster) < hosp.capacity:
                roster.append(d)
                state.where[d] = h
                if influenced is not None:
                    influenced.setdefault(couple, set()).add(h)
                break
            rank = hosp.rank
            worst = max(roster, key=rank.__getitem__)
            if rank[worst] < rank[d]:
                continue
            owner = couple_of.get(worst)
            if owner == couple:
                state.next_choice[si] = ptr
                return ("fail", couple)
            if owner is not None:
                state.next_choice[si] = ptr
                return ("reorder", owner)
            roster[roster.index(worst)] = d
            state.where[d] = h
            state.where[worst] = -1
            displaced.append(worst)
            if events is not None:
                events.append(EvictionEvent(attempt, couple, worst, h, STABILIZE))
            if influenced is not None:
                influenced.setdefault(couple, set()).add(h)
            break
        state.next_choice[si] = ptr
    return ("continue", None)


def _insert_couples(market, state, pi, events, influenced, attempt):
    hospitals = market.hospitals
    couple_of = market.couple_of
    order = {c: i for i, c in enumerate(pi)}
    for c in pi:
        cp = market.couples[c]
        f, m = cp.first, cp.second
        while state.couple_next[c] < len(cp.prefs):
            h, h2 = cp.prefs[state.couple_next[c]]
            state.couple_next[c] += 1
            if h == h2:
                rej = _rejected(hospitals[h], state.rosters[h], (f, m))
                if f in rej or m in rej:
                    continue
                removed = [(h, d) for d in rej]
            else:
                rej_h = _rejected(hospitals[h], state.rosters[h], (f,))
                rej_h2 = _rejected(hospitals[h2], state.rosters[h2], (m,))
                if f in rej_h or m in rej_h2:
                    continue
                removed = [(h, d) for d in rej_h] + [(h2, d) for d in rej_h2]
            victims = {couple_of[d] for _, d in removed if d in couple_of}
            if victims:
                return ("reorder", c, min(victims, key=order.__getitem__))
            for hh, d in removed:
                state.rosters[hh].remove(d)
                state.where[d] = -1
                events.append(EvictionEvent(attempt, c, d, hh, APPLICATION))
            state.rosters[h].append(f)
            state.rosters[h2].append(m)
            state.where[f] = h
            state.where[m] = h2
            state.couple_pair[c] = (h, h2)
            influenced.setdefault(c, set()).update((h, h2))
            status, victim = run_stabilize(
                market, state, deque(d for _, d in removed), c, events, influenced, attempt
            )
            if status == "fail":
                return ("self", c, None)
            if status == "reorder":
                return ("reorder", c, victim)
            break
        else:
            state.couple_pair[c] = None
    return ("done", None, None)


def _check_permutation(market: Market, pi) -> tuple[int, ...]:
    n = len(market.couples)
    if pi is None:
        return tuple(range(n))
    pi = tuple(int(c) for c in pi)
    if sorted(pi) != list(range(n)):
        raise MarketError(f"permutation {pi} is not a permutation of the {n} couples")
    return pi


def soda(
    market: Market,
    pi: Sequence[int] | None = None,
    mode: str = CLASSIC,
    max_restarts: int | None = None,
) -> SodaOutcome:
    """Run SoDA and report the outcome.

    ``mode`` selects how a couple pushing out an earlier couple is handled:
    ``classic`` moves the evictor just ahead of the victim and restarts,
    ``backward-edge`` also remembers every such (evictor, victim) precedence
    and only tries orders consistent with all of them, ``direct`` fails at
    once.  ``max_restarts`` is a safety valve; exceeding it reports
    permutation exhaustion.
    """
    if mode not in MODES:
        raise MarketError(f"unknown mode {mode!r}")
    pi = _check_permutation(market, pi)
    base = _run_da(market)
    tried: set[tuple[int, ...]] = set()
    tried_log: list[tuple[int, ...]] = [pi]
    events: list[EvictionEvent] = []
    restart_log: list[Restart] = []
    influenced: dict[int, set[int]] = {}
    constraints: set[tuple[int, int]] = set()
    attempt = 0

    def outcome(status, matching=None, couple=None):
        return SodaOutcome(status, pi, matching, attempt, events, restart_log, tried_log, couple, influenced)

    while True:
        state = base.copy()
        kind, c, victim = _insert_couples(market, state, pi, events, influenced, attempt)
        if kind == "done":
            return outcome(STABLE, state.to_matching(market))
        if kind == "self":
            return outcome(FAIL_SELF_EVICTION, couple=c)
        if mode == DIRECT:
            return outcome(FAIL_COUPLE_EVICTION, couple=c)
        candidate = move_ahead(pi, c, victim)
        if mode == BACKWARD_EDGE:
            constraints.add((c, victim))
            candidate = constrained_order(candidate, constraints)
            if candidate is None:
                return outcome(FAIL_CYCLE_DETECTED, couple=c)
        if candidate in tried or (max_restarts is not None and attempt >= max_restarts):
            return outcome(FAIL_PERMUTATION_EXHAUSTED, couple=c)
        tried.add(candidate)
        tried_log.append(candidate)
        restart_log.append(Restart(attempt, c, victim, candidate))
        pi = candidate
        attempt += 1


def direct_insertion(market: Market, pi: Sequence[int] | None = None) -> SodaOutcome:
    """Single-permutation insertion: any couple pushing out another couple fails."""
    return soda(market, pi, mode=DIRECT)
