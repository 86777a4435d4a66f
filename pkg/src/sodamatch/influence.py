"""Influence trees, the couples graph and the graph utilities built on them.

An influence tree collects the (hospital, doctor) pairs a couple could
plausibly disturb when inserted after the singles-only DA stage, allowing an
adversary ``r`` extra rejections on top of the natural ones.  Trees are
evaluated against the frozen DA matching: a doctor arriving at a hospital is
compared with that hospital's DA roster only.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

from .engines import SodaOutcome
from .market import Market, MarketError, Matching, accepts, accepts_both


@dataclass(frozen=True)
class TreeEntry:
    hospital: int
    inserter: int
    parent: int | None
    budget: int


@dataclass
class InfluenceTree:
    couple: int
    budget: int
    roots: list[tuple[int, int]]
    entries: list[TreeEntry] = field(default_factory=list)

    @property
    def hospitals(self) -> set[int]:
        return {e.hospital for e in self.entries}

    @property
    def pairs(self) -> set[tuple[int, int]]:
        return {(e.hospital, e.inserter) for e in self.entries}

    @property
    def self_intersecting(self) -> bool:
        return len(self.hospitals) < len(self.entries)

    def __contains__(self, item) -> bool:
        return item in self.pairs

    def __len__(self) -> int:
        return len(self.entries)

    def to_dict(self) -> dict:
        return {
            "couple": self.couple,
            "budget": self.budget,
            "roots": [list(p) for p in self.roots],
            "entries": [
                {"hospital": e.hospital, "inserter": e.inserter, "parent": e.parent, "budget": e.budget}
                for e in self.entries
            ],
        }


def default_budget(market: Market) -> int:
    eps = market.params.get("epsilon")
    if eps:
        return math.ceil(4 / eps)
    return 4


def acceptable_pairs(market: Market, mu: Matching, couple: int, limit: int) -> list[tuple[int, int]]:
    """The first ``limit`` listed pairs the couple would be accepted into under ``mu``."""
    cp = market.couples[couple]
    H = market.hospitals
    out = []
    for h, h2 in cp.prefs:
        if len(out) >= limit:
            break
        if h == h2:
            ok = accepts_both(H[h], mu.rosters[h], cp.members)
        else:
            ok = accepts(H[h], mu.rosters[h], cp.first) and accepts(H[h2], mu.rosters[h2], cp.second)
        if ok:
            out.append((h, h2))
    return out


def build_influence_tree(market: Market, da: Matching, couple: int, r: int) -> InfluenceTree:
    """Influence tree of ``couple`` with rejection budget ``r``.

    The roots are the couple's first r+1 acceptable pairs; the i-th (from 0)
    starts with budget r - i.  At a hospital a doctor is skipped over when the
    hospital is full and its least preferred incumbent ranks higher.
    Otherwise the pair is recorded, and with ``o`` doctors now held and ``f = k - o`` free
    seats, the j-th least preferred of them (j <= min(o, b - f)) is sent on
    down their list with budget ``b - j - f``.
    """
    if r < 0:
        raise MarketError("influence budget must be non-negative")
    H = market.hospitals
    rosters = da.rosters
    roots = acceptable_pairs(market, da, couple, r + 1)
    tree = InfluenceTree(couple, r, roots)
    index: dict[tuple[int, int], int] = {}
    best: dict[tuple[int, int], int] = {}
    cp = market.couples[couple]
    # (doctor, budget, list position or None, forced hospital, parent entry)
    queue: deque = deque()
    for i, (h, h2) in enumerate(roots):
        queue.append((cp.first, r - i, None, h, None))
        queue.append((cp.second, r - i, None, h2, None))

    while queue:
        d, b, pos, forced, parent = queue.popleft()
        key = (d, forced if pos is None else -1 - pos)
        if best.get(key, -1) >= b:
            continue
        best[key] = b
        hosp = None
        if pos is None:
            h = forced
            if accepts(H[h], rosters[h], d):
                hosp = H[h]
        else:
            prefs = market.singles[market.single_index[d]].prefs
            while pos < len(prefs):
                h = prefs[pos]
                if accepts(H[h], rosters[h], d):
                    hosp = H[h]
                    break
                pos += 1
        if hosp is None:
            continue
        h = hosp.id
        if (h, d) not in index:
            index[(h, d)] = len(tree.entries)
            tree.entries.append(TreeEntry(h, d, parent, b))
        here = index[(h, d)]
        held = set(rosters[h]) | {d}
        free = hosp.capacity - len(held)
        if not (b > 0 or free == -1):
            continue
        worst_first = sorted(held, key=hosp.rank.__getitem__, reverse=True)
        for j in range(1, min(len(held), b - free) + 1):
            dj = worst_first[j - 1]
            if not market.is_single(dj):
                continue
            if dj == d and pos is not None:
                nxt = pos + 1
            else:
                nxt = market.singles[market.single_index[dj]].prefs.index(h) + 1
            queue.append((dj, b - j - free, nxt, None, here))
    return tree


def build_all_trees(market: Market, da: Matching, r: int) -> list[InfluenceTree]:
    return [build_influence_tree(market, da, c, r) for c in range(len(market.couples))]


# -- couples graph -------------------------------------------------------------


@dataclass
class CouplesGraph:
    nodes: list[int]
    edges: dict[tuple[int, int], list[tuple[int, int, int]]] = field(default_factory=dict)

    def successors(self, c: int) -> list[int]:
        return sorted(b for a, b in self.edges if a == c)

    def adjacency(self) -> dict[int, list[int]]:
        adj: dict[int, list[int]] = {c: [] for c in self.nodes}
        for a, b in sorted(self.edges):
            adj[a].append(b)
        return adj

    def edge_list(self) -> list[tuple[int, int]]:
        return sorted(self.edges)

    def to_dot(self) -> str:
        lines = ["digraph couples {"]
        for c in self.nodes:
            lines.append(f'  c{c} [label="{c}"];')
        for (a, b), wit in sorted(self.edges.items()):
            hs = ",".join(str(h) for h in sorted({w[0] for w in wit}))
            lines.append(f'  c{a} -> c{b} [label="h{hs}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


def build_couples_graph(market: Market, trees: Sequence[InfluenceTree]) -> CouplesGraph:
    """Edge a -> b when some hospital holds (h, x) in a's tree and (h, y) in
    b's tree with x != y and the hospital preferring x."""
    budgets = {t.budget for t in trees}
    if len(budgets) > 1:
        raise MarketError(f"influence trees built with different budgets {sorted(budgets)}")
    graph = CouplesGraph(sorted(t.couple for t in trees))
    at: dict[int, list[tuple[int, int]]] = {}
    for t in trees:
        for h, d in sorted(t.pairs):
            at.setdefault(h, []).append((t.couple, d))
    for h in sorted(at):
        rank = market.hospitals[h].rank
        items = at[h]
        for i, (c1, d1) in enumerate(items):
            for c2, d2 in items[i + 1:]:
                if c1 == c2 or d1 == d2:
                    continue
                if rank[d1] < rank[d2]:
                    graph.edges.setdefault((c1, c2), []).append((h, d1, d2))
                else:
                    graph.edges.setdefault((c2, c1), []).append((h, d2, d1))
    return graph


def intersections(trees: Sequence[InfluenceTree]) -> dict[tuple[int, int], set[int]]:
    """Hospitals where two trees meet through different doctors, per couple pair."""
    at: dict[int, list[tuple[int, int]]] = {}
    for t in trees:
        for h, d in t.pairs:
            at.setdefault(h, []).append((t.couple, d))
    out: dict[tuple[int, int], set[int]] = {}
    for h, items in at.items():
        for i, (c1, d1) in enumerate(items):
            for c2, d2 in items[i + 1:]:
                if c1 != c2 and d1 != d2:
                    out.setdefault((min(c1, c2), max(c1, c2)), set()).add(h)
    return out


def weakly_connected_components(g: CouplesGraph) -> list[list[int]]:
    undirected: dict[int, set[int]] = {c: set() for c in g.nodes}
    for a, b in g.edges:
        undirected[a].add(b)
        undirected[b].add(a)
    seen: set[int] = set()
    comps = []
    for c in g.nodes:
        if c in seen:
            continue
        comp = []
        todo = deque([c])
        seen.add(c)
        while todo:
            x = todo.popleft()
            comp.append(x)
            for y in undirected[x]:
                if y not in seen:
                    seen.add(y)
                    todo.append(y)
        comps.append(sorted(comp))
    return comps


def find_cycle(g: CouplesGraph) -> list[int] | None:
    """A shortest directed cycle as a node list, or None for a DAG."""
    adj = g.adjacency()
    best: list[int] | None = None
    for start in g.nodes:
        parent = {start: None}
        todo = deque([start])
        found = None
        while todo and found is None:
            x = todo.popleft()
            for y in adj[x]:
                if y == start:
                    found = x
                    break
                if y not in parent:
                    parent[y] = x
                    todo.append(y)
        if found is None:
            continue
        path = [found]
        while path[-1] != start:
            path.append(parent[path[-1]])
        cycle = path[::-1]
        if best is None or len(cycle) < len(best):
            best = cycle
    return best


class CycleError(MarketError):
    def __init__(self, cycle: list[int]):
        super().__init__(f"couples graph has a directed cycle {cycle}")
        self.cycle = cycle


def topological_insertion_order(g: CouplesGraph) -> tuple[int, ...]:
    """Order with every edge pointing forward; smallest couple index first on ties."""
    import heapq

    indeg = {c: 0 for c in g.nodes}
    adj = g.adjacency()
    for a, b in g.edges:
        indeg[b] += 1
    heap = [c for c in g.nodes if indeg[c] == 0]
    heapq.heapify(heap)
    out = []
    while heap:
        c = heapq.heappop(heap)
        out.append(c)
        for b in adj[c]:
            indeg[b] -= 1
            if indeg[b] == 0:
                heapq.heappush(heap, b)
    if len(out) != len(g.nodes):
        raise CycleError(find_cycle(g))
    return tuple(out)


def cycle_hospitals(g: CouplesGraph, cycle: list[int]) -> list[set[int]]:
    """Witness hospitals for each edge along ``cycle``."""
    out = []
    for i, a in enumerate(cycle):
        b = cycle[(i + 1) % len(cycle)]
        out.append({w[0] for w in g.edges[(a, b)]})
    return out


def distinct_cycle_witness(g: CouplesGraph, cycle: list[int]) -> list[int] | None:
    """One witness hospital per edge of ``cycle``, all different, or None."""
    options = [sorted(hs) for hs in cycle_hospitals(g, cycle)]
    chosen: list[int] = []

    def pick(i):
        if i == len(options):
            return True
        for h in options[i]:
            if h not in chosen:
                chosen.append(h)
                if pick(i + 1):
                    return True
                chosen.pop()
        return False

    return list(chosen) if pick(0) else None


# -- containment check -----------------------------------------------------------


@dataclass
class ContainmentReport:
    checked: int
    violations: dict[int, set[int]]

    @property
    def ok(self) -> bool:
        return not self.violations


def verify_influence_containment(
    market: Market, outcome: SodaOutcome, trees: Sequence[InfluenceTree]
) -> ContainmentReport:
    """Compare the hospitals each couple touched during the run with its tree."""
    by_couple = {t.couple: t.hospitals for t in trees}
    violations = {}
    for c, touched in sorted(outcome.influenced.items()):
        missing = set(touched) - by_couple.get(c, set())
        if missing:
            violations[c] = missing
    return ContainmentReport(len(outcome.influenced), violations)


def trees_to_json(trees: Sequence[InfluenceTree]) -> str:
    return json.dumps([t.to_dict() for t in trees], indent=1)
