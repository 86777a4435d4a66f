"""Random markets, the one-couple counterexample, an exhaustive stability
oracle and the l-pessimistic application process.

All randomness comes from numpy's PCG64 generator seeded through
``SeedSequence`` (``numpy.random.default_rng(seed)``), so a seed gives the same
market on every platform.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .market import Couple, Hospital, Market, MarketError, Matching, Single, find_blocks

PRNG = "numpy-pcg64"
DEFAULT_COUPLE_CAP = 200


class ResourceError(RuntimeError):
    """Enumeration would exceed the configured budget."""


@dataclass
class GenParams:
    """Parameters of a random market.

    The couple count is taken from ``couples`` when given, else ``alpha * n``,
    else ``n ** (1 - epsilon)``, else zero.  The hospital count defaults to
    ``ceil(lam * n / capacity)`` so that there are at least ``lam * n``
    positions.
    """

    n: int
    couples: int | None = None
    alpha: float | None = None
    epsilon: float | None = None
    hospitals: int | None = None
    capacity: int = 3
    lam: float = 1.5
    rho: float = 1.0
    couple_list_cap: int | None = None  # None: min(200, |H|^2)
    single_list_cap: int | None = None
    fitness: bool = False
    seed: int = 0
    weights: Sequence[float] | None = None
    couple_weights: Sequence[float] | None = None

    def n_couples(self) -> int:
        if self.couples is not None:
            return int(self.couples)
        if self.alpha is not None:
            return int(round(self.alpha * self.n))
        if self.epsilon is not None:
            return int(round(self.n ** (1 - self.epsilon)))
        return 0

    def n_hospitals(self) -> int:
        if self.hospitals is not None:
            return int(self.hospitals)
        return math.ceil(self.lam * self.n / self.capacity - 1e-9)

    def check(self) -> None:
        if self.n < 0 or self.n_couples() < 0:
            raise MarketError("n and the couple count must be non-negative")
        if self.capacity < 1:
            raise MarketError("capacity must be >= 1")
        if self.n_hospitals() < 1:
            raise MarketError("need at least one hospital")
        if self.rho < 1:
            raise MarketError("rho must be >= 1")
        if (self.couple_list_cap is not None and self.couple_list_cap < 1) or (
            self.single_list_cap is not None and self.single_list_cap < 1
        ):
            raise MarketError("list caps must be >= 1")
        H = self.n_hospitals()
        if self.n_couples() and self.couple_list_cap is not None and self.couple_list_cap > H * H:
            raise MarketError(f"couple list cap {self.couple_list_cap} exceeds the {H * H} hospital pairs")
        if self.alpha is not None and self.alpha < 0:
            raise MarketError("alpha must be non-negative")
        if self.epsilon is not None and not 0 <= self.epsilon <= 1:
            raise MarketError("epsilon must lie in [0, 1]")
        for w in (self.weights, self.couple_weights):
            if w is not None and (len(w) != H or min(w) <= 0):
                raise MarketError("distribution weights must be positive, one per hospital")

    def metadata(self) -> dict:
        d = asdict(self)
        d.pop("weights")
        d.pop("couple_weights")
        d.update(
            couples=self.n_couples(),
            hospitals=self.n_hospitals(),
            prng=PRNG,
            custom_weights=self.weights is not None,
        )
        return d


def derive_seed(base: int, index: int) -> int:
    """Independent 64-bit seed for trial ``index`` under ``base``."""
    ss = np.random.SeedSequence([int(base) & (2**64 - 1), int(index)])
    return int(ss.generate_state(1, np.uint64)[0])


def hospital_weights(p: GenParams, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Weights of Z (single draws) and Q (couple draws)."""
    H = p.n_hospitals()
    if p.weights is not None:
        z = np.asarray(p.weights, dtype=float)
    elif p.fitness:
        # accept a uniform hospital when a uniform draw on [0.2, 1] is below
        # its score: the accepted hospital has probability ~ score - 0.2
        scores = rng.uniform(0.2, 1.0, H)
        z = scores - 0.2
    elif p.rho > 1:
        z = rng.uniform(1.0, p.rho, H)
    else:
        z = np.ones(H)
    q = z if p.couple_weights is None else np.asarray(p.couple_weights, dtype=float)
    return z / z.sum(), q / q.sum()


def ratio_bound(weights: np.ndarray) -> float:
    return float(weights.max() / weights.min())


def _draw_lists(rng: np.random.Generator, w: np.ndarray, rows: int, cap: int) -> list[tuple[int, ...]]:
    """``rows`` lists of ``cap`` distinct hospitals.

    With uniform weights each list is a uniformly ordered sample without
    replacement.  Otherwise sorting exponential keys scaled by 1/w gives the
    same law as drawing from w repeatedly and discarding hospitals already
    listed.
    """
    H = len(w)
    if rows == 0:
        return []
    if np.all(w == w[0]):
        if cap == H:
            return [tuple(rng.permutation(H).tolist()) for _ in range(rows)]
        return [tuple(rng.choice(H, cap, replace=False).tolist()) for _ in range(rows)]
    with np.errstate(divide="ignore"):
        keys = rng.standard_exponential((rows, H)) / w
    if cap < H:
        part = np.argpartition(keys, cap - 1, axis=1)[:, :cap]
        sub = np.take_along_axis(keys, part, axis=1)
        out = np.take_along_axis(part, np.argsort(sub, axis=1), axis=1)
    else:
        out = np.argsort(keys, axis=1)
    return [tuple(row) for row in out.tolist()]


def _draw_pairs(rng: np.random.Generator, q: np.ndarray, cap: int) -> list[tuple[int, int]]:
    """Distinct pairs from Q x Q in order of first appearance."""
    H = len(q)
    uniform = bool(np.all(q == q[0]))
    seen: dict[int, None] = {}
    batch = max(2 * cap, 8)
    while len(seen) < cap:
        if uniform:
            a = rng.integers(0, H, batch)
            b = rng.integers(0, H, batch)
        else:
            a = rng.choice(H, batch, p=q)
            b = rng.choice(H, batch, p=q)
        for code in (a * H + b).tolist():
            if code not in seen:
                seen[code] = None
                if len(seen) == cap:
                    break
    codes = np.fromiter(seen, dtype=np.int64, count=len(seen))
    return list(zip((codes // H).tolist(), (codes % H).tolist()))


def uniform_rankings(rng: np.random.Generator, H: int, D: int) -> np.ndarray:
    """Independent uniform hospital rankings as a matrix of random sort keys
    (lower is better); ties have probability zero for float64 keys."""
    return rng.random((H, D))


def generate_market(p: GenParams, rankings=None) -> Market:
    """Random market for ``p``.

    Singles get ids 0..n-1 and couple ``i`` has members n+2i and n+2i+1.
    ``rankings``, when given, is called as ``rankings(rng, H, D)`` and must
    return a rank matrix; the default draws uniform rankings.
    """
    p.check()
    rng = np.random.default_rng(p.seed)
    n, C, H = p.n, p.n_couples(), p.n_hospitals()
    D = n + 2 * C
    z, q = hospital_weights(p, rng)
    cap = H if p.single_list_cap is None else min(p.single_list_cap, H)
    lists = _draw_lists(rng, z, n, cap)
    singles = [Single(i, row) for i, row in enumerate(lists)]
    pair_cap = min(DEFAULT_COUPLE_CAP, H * H) if p.couple_list_cap is None else p.couple_list_cap
    couples = [Couple(n + 2 * i, n + 2 * i + 1, tuple(_draw_pairs(rng, q, pair_cap))) for i in range(C)]
    rank = uniform_rankings(rng, H, D) if rankings is None else np.asarray(rankings(rng, H, D))
    hospitals = [Hospital(h, p.capacity, rank[h]) for h in range(H)]
    meta = p.metadata()
    meta["single_list_len"] = cap
    meta["couple_list_len"] = pair_cap
    meta["truncated"] = cap < H or (C > 0 and pair_cap < H * H)
    if p.fitness or p.rho > 1:
        meta["ratio"] = ratio_bound(z)
    return Market(hospitals, singles, couples, meta)


# -- counterexample --------------------------------------------------------------

# smallest seed for which the n=4 instance has no stable matching, found by
# scanning seeds 0, 1, ... with the exhaustive oracle
COUNTEREXAMPLE_SEED = 0


def counterexample_market(
    n: int,
    doctor_prefs: tuple[Sequence[Sequence[int]], Sequence[tuple[int, int]]] | None = None,
    seed: int | None = None,
) -> Market:
    """One couple, n-1 singles and n unit-capacity hospitals.

    Every hospital ranks the couple's second member first, the singles next
    in id order and the first member last.  Doctor lists are full length:
    either ``doctor_prefs = (single_lists, couple_pairs)`` or random from
    ``seed`` (default ``COUNTEREXAMPLE_SEED``).
    """
    if n < 2:
        raise MarketError("counterexample needs n >= 2")
    f, m = n - 1, n
    if doctor_prefs is None:
        rng = np.random.default_rng(COUNTEREXAMPLE_SEED if seed is None else seed)
        single_lists = [rng.permutation(n).tolist() for _ in range(n - 1)]
        pairs = [divmod(int(x), n) for x in rng.permutation(n * n)]
    else:
        single_lists, pairs = doctor_prefs
    ranking = [m] + list(range(n - 1)) + [f]
    hospitals = [Hospital.from_ranking(h, 1, ranking) for h in range(n)]
    singles = [Single(i, tuple(single_lists[i])) for i in range(n - 1)]
    couple = Couple(f, m, tuple(tuple(p) for p in pairs))
    params = {"name": "counterexample", "n": n, "seed": None if doctor_prefs else seed}
    if doctor_prefs is None:
        params["seed"] = COUNTEREXAMPLE_SEED if seed is None else seed
    return Market(hospitals, singles, [couple], params)


# -- exhaustive oracle -------------------------------------------------------------


def _options(market: Market, reverse: bool):
    opts = []
    for s in market.singles:
        o = [("s", s.id, h) for h in s.prefs] + [("s", s.id, None)]
        opts.append(o[::-1] if reverse else o)
    for ci, c in enumerate(market.couples):
        o = [("c", ci, pair) for pair in c.prefs] + [("c", ci, None)]
        opts.append(o[::-1] if reverse else o)
    return opts[::-1] if reverse else opts


def enumerate_matchings(market: Market, budget: int = 10**7, reverse: bool = False) -> Iterator[Matching]:
    """Every capacity-respecting matching, each exactly once.

    Agents are fixed one after another (singles then couples, or the reverse
    with options reversed).  ``budget`` caps the number of partial
    assignments explored.
    """
    opts = _options(market, reverse)
    load = [0] * len(market.hospitals)
    caps = [h.capacity for h in market.hospitals]
    chosen: list = [None] * len(opts)
    steps = 0

    def fits(kind, val):
        if val is None:
            return True
        if kind == "s":
            return load[val] < caps[val]
        a, b = val
        if a == b:
            return load[a] + 2 <= caps[a]
        return load[a] < caps[a] and load[b] < caps[b]

    def place(kind, val, delta):
        if val is None:
            return
        if kind == "s":
            load[val] += delta
        else:
            load[val[0]] += delta
            load[val[1]] += delta

    def rec(i):
        nonlocal steps
        if i == len(opts):
            singles = {}
            couples = [None] * len(market.couples)
            for kind, who, val in chosen:
                if kind == "s":
                    singles[who] = val
                else:
                    couples[who] = val
            yield Matching.build(market, singles, couples)
            return
        for kind, who, val in opts[i]:
            steps += 1
            if steps > budget:
                raise ResourceError(f"enumeration budget {budget} exceeded")
            if not fits(kind, val):
                continue
            place(kind, val, 1)
            chosen[i] = (kind, who, val)
            yield from rec(i + 1)
            place(kind, val, -1)

    yield from rec(0)


def exhaustive_stability_oracle(market: Market, budget: int = 10**7, reverse: bool = False) -> Matching | None:
    """First stable matching found by full enumeration, or None if none exists."""
    for mu in enumerate_matchings(market, budget, reverse):
        if not find_blocks(market, mu):
            return mu
    return None


def count_stable(market: Market, budget: int = 10**7, reverse: bool = False) -> tuple[int, int]:
    """(number of matchings, number of stable matchings)."""
    total = stable = 0
    for mu in enumerate_matchings(market, budget, reverse):
        total += 1
        stable += not find_blocks(market, mu)
    return total, stable


# -- l-pessimistic process -----------------------------------------------------------


@dataclass
class ProcessStats:
    visited_hospitals: int
    steps: int
    settled_histogram: list[int]
    terminated: bool
    visited_trace: list[int] = field(default_factory=list)


def l_pessimistic_da(market: Market, l: int, seed: int = 0, record_every: int = 0) -> ProcessStats:
    """Run the randomized l-pessimistic application process.

    Each step picks uniformly among players (singles and couples) holding
    fewer than ``l`` assignments and with list entries left; the player
    applies to its next entry.  A hospital takes an applicant only if it is
    empty and nobody else applied to it in the same step (a couple applying
    to (h, h) collides with itself).  Otherwise both the applicant and any
    occupant are turned away.  Losing one member's seat costs a couple the
    whole pair.  ``settled_histogram[q]`` counts doctors whose player holds
    exactly q assignments at the end.
    """
    if l < 1:
        raise MarketError("l must be >= 1")
    if any(h.capacity != 1 for h in market.hospitals):
        raise MarketError("the pessimistic process needs unit capacities")
    lists: list[list] = [list(s.prefs) for s in market.singles] + [list(c.prefs) for c in market.couples]
    n_s = len(market.singles)
    for i, lst in enumerate(lists):
        if len(lst) < l:
            who = f"single {market.singles[i].id}" if i < n_s else f"couple {i - n_s}"
            raise MarketError(f"{who} lists {len(lst)} entries, fewer than l={l}")
    rng = np.random.default_rng(seed)
    P = len(lists)
    ptr = [0] * P
    held: list[list] = [[] for _ in range(P)]  # hospitals (singles) or pairs (couples)
    occupant: dict[int, tuple[int, object]] = {}  # hospital -> (player, entry)
    visited: set[int] = set()
    active = [i for i in range(P) if l > 0]
    pos = {p: i for i, p in enumerate(active)}
    steps = 0
    trace = []

    def deactivate(p):
        i = pos.pop(p)
        last = active.pop()
        if last != p:
            active[i] = last
            pos[last] = i

    def activate(p):
        if p not in pos and ptr[p] < len(lists[p]) and len(held[p]) < l:
            pos[p] = len(active)
            active.append(p)

    def evict(h):
        p, entry = occupant.pop(h)
        held[p].remove(entry)
        if p >= n_s:
            for other in entry:
                if other != h:
                    occupant.pop(other, None)
        activate(p)

    while active:
        p = active[int(rng.integers(len(active)))]
        entry = lists[p][ptr[p]]
        ptr[p] += 1
        steps += 1
        targets = [entry] if p < n_s else list(entry)
        visited.update(targets)
        clash = len(set(targets)) < len(targets)
        for h in set(targets):
            if h in occupant:
                evict(h)
                clash = True
        if not clash:
            held[p].append(entry)
            for h in targets:
                occupant[h] = (p, entry)
        if len(held[p]) >= l or ptr[p] >= len(lists[p]):
            deactivate(p)
        if record_every and steps % record_every == 0:
            trace.append(len(visited))

    hist = [0] * (l + 1)
    for p in range(P):
        hist[len(held[p])] += 1 if p < n_s else 2
    return ProcessStats(len(visited), steps, hist, all(len(h) >= l for h in held), trace)
