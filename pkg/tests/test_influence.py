import json
import math
import random

import networkx as nx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_market
from sodamatch.engines import deferred_acceptance, soda
from sodamatch.generators import GenParams, generate_market
from sodamatch.influence import (
    CouplesGraph,
    CycleError,
    build_all_trees,
    build_couples_graph,
    build_influence_tree,
    cycle_hospitals,
    default_budget,
    distinct_cycle_witness,
    find_cycle,
    intersections,
    topological_insertion_order,
    trees_to_json,
    verify_influence_containment,
    weakly_connected_components,
)
from sodamatch.market import Couple, Hospital, Market, MarketError, Single, choice


# -- independent oracle: the recursive definition, no memo ----------------------------


def naive_tree(m, da, c, r):
    pairs = set()
    H = m.hospitals

    def worst_first(h, d):
        held = set(da.rosters[h]) | {d}
        return sorted(held, key=lambda x: -H[h].rank[x])

    def at(d, b, h, stack):
        pairs.add((h, d))
        order = worst_first(h, d)
        free = H[h].capacity - len(order)
        if b > 0 or free == -1:
            for j in range(1, min(len(order), b - free) + 1):
                dj = order[j - 1]
                if dj in m.couple_of:
                    continue
                prefs = m.singles[m.single_index[dj]].prefs
                walk(dj, b - j - free, prefs.index(h) + 1, stack)

    def walk(d, b, pos, stack):
        state = (d, b, pos)
        if state in stack:
            return  # the same expansion is already in progress above
        prefs = m.singles[m.single_index[d]].prefs
        for p in range(pos, len(prefs)):
            h = prefs[p]
            roster = da.rosters[h]
            full = len(roster) >= H[h].capacity
            if full and all(H[h].rank[x] < H[h].rank[d] for x in roster):
                continue
            at(d, b, h, stack | {state})
            return

    cp = m.couples[c]
    roots = []
    for h, h2 in cp.prefs:
        if h == h2:
            ok = {cp.first, cp.second} <= choice(H[h], set(da.rosters[h]) | {cp.first, cp.second})
        else:
            ok = cp.first in choice(H[h], set(da.rosters[h]) | {cp.first}) and cp.second in choice(
                H[h2], set(da.rosters[h2]) | {cp.second}
            )
        if ok:
            roots.append((h, h2))
        if len(roots) == r + 1:
            break
    for i, (h, h2) in enumerate(roots):
        for d, hh in ((cp.first, h), (cp.second, h2)):
            roster = da.rosters[hh]
            if len(roster) >= H[hh].capacity and all(H[hh].rank[x] < H[hh].rank[d] for x in roster):
                continue
            at(d, r - i, hh, frozenset())
    return pairs


def hand_market():
    # three unit hospitals, two singles, one couple (ids 2, 3)
    hospitals = [
        Hospital.from_ranking(0, 1, [2, 0, 1, 3]),
        Hospital.from_ranking(1, 1, [3, 1, 0, 2]),
        Hospital.from_ranking(2, 1, [0, 1, 2, 3]),
    ]
    singles = [Single(0, (0, 1, 2)), Single(1, (1, 0, 2))]
    couples = [Couple(2, 3, ((0, 1), (1, 2), (2, 0)))]
    return Market(hospitals, singles, couples)


# worked by hand: d2 pushes s0 out of h0, d3 pushes s1 out of h1; each
# single is refused by the other's hospital and ends at the vacant h2
HAND_EXPECTED = {
    0: {(0, 2), (1, 3), (2, 0), (2, 1)},
}


def test_hand_fixture_matches_naive_recursion():
    m = hand_market()
    da = deferred_acceptance(m)
    assert da.singles == {0: 0, 1: 1}
    for r in range(4):
        t = build_influence_tree(m, da, 0, r)
        assert t.pairs == naive_tree(m, da, 0, r)
    assert build_influence_tree(m, da, 0, 0).pairs == HAND_EXPECTED[0]


def test_vacant_top_pair_gives_roots_only():
    hospitals = [Hospital.from_ranking(h, 1, [0, 1, 2]) for h in range(3)]
    m = Market(hospitals, [Single(0, (2,))], [Couple(1, 2, ((0, 1), (1, 0)))])
    da = deferred_acceptance(m)
    t = build_influence_tree(m, da, 0, 0)
    assert t.pairs == {(0, 1), (1, 2)}
    assert [e.parent for e in t.entries] == [None, None]
    assert t.roots == [(0, 1)]
    assert not t.self_intersecting


def test_negative_budget_rejected(example):
    with pytest.raises(MarketError):
        build_influence_tree(example, deferred_acceptance(example), 0, -1)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 10**6), st.integers(0, 3))
def test_tree_matches_naive_recursion(seed, r):
    m = random_market(random.Random(seed), n_h=4, n_s=5, n_c=2, max_cap=2)
    da = deferred_acceptance(m)
    for c in range(len(m.couples)):
        t = build_influence_tree(m, da, c, r)
        assert t.pairs == naive_tree(m, da, c, r)
        # every parent link points at an earlier entry
        for i, e in enumerate(t.entries):
            assert e.parent is None or e.parent < i
        longest = max([len(s.prefs) for s in m.singles] + [len(cp.prefs) for cp in m.couples] + [1])
        assert len(t) <= len(m.hospitals) * (r + 1) * longest


def test_tree_monotone_in_budget():
    m = generate_market(GenParams(n=80, couples=4, seed=3))
    da = deferred_acceptance(m)
    for c in range(4):
        prev = set()
        for r in range(5):
            cur = build_influence_tree(m, da, c, r).pairs
            assert prev <= cur
            prev = cur


def test_example_trees(example):
    da = deferred_acceptance(example)
    t1 = build_influence_tree(example, da, 0, 1)
    t2 = build_influence_tree(example, da, 1, 1)
    # c1 = (d6, d7) lands in (h3, h4); d6 enters h3
    assert (2, 5) in t1
    assert t1.roots == [(2, 3), (3, 4)]
    # c2 = (d8, d9) takes (h2, h2); d3 is pushed on into h3
    assert t2.roots[0] == (1, 1)
    assert (2, 2) in t2
    t0 = build_influence_tree(example, da, 0, 0)
    assert t0.roots == [(2, 3)]


def test_example_graph_by_definition_scan(example):
    da = deferred_acceptance(example)
    trees = build_all_trees(example, da, 1)
    g = build_couples_graph(example, trees)
    assert_graph_matches_definition(example, trees, g)
    # at h3, d3 (from c2's tree) outranks d6 (from c1's tree)
    assert (2, 2, 5) in g.edges[(1, 0)]
    assert weakly_connected_components(g) == [[0, 1]]


def assert_graph_matches_definition(m, trees, g):
    expected = set()
    for a in trees:
        for b in trees:
            if a.couple == b.couple:
                continue
            for h, d1 in a.pairs:
                for h2, d2 in b.pairs:
                    if h == h2 and d1 != d2 and m.hospitals[h].prefers(d1, d2):
                        expected.add((a.couple, b.couple, h, d1, d2))
    got = {(a, b, h, d1, d2) for (a, b), wit in g.edges.items() for h, d1, d2 in wit}
    assert got == expected
    for a, b in g.edges:
        assert a != b


def test_random_graphs_match_definition():
    for seed in range(20):
        m = generate_market(GenParams(n=60, couples=5, seed=seed))
        trees = build_all_trees(m, deferred_acceptance(m), 2)
        assert_graph_matches_definition(m, trees, build_couples_graph(m, trees))


def two_cycle_market():
    hospitals = [Hospital.from_ranking(0, 1, [0, 3, 1, 2]), Hospital.from_ranking(1, 1, [2, 1, 0, 3])]
    couples = [Couple(0, 1, ((0, 1),)), Couple(2, 3, ((1, 0),))]
    return Market(hospitals, [], couples)


def test_two_cycle_fixture():
    m = two_cycle_market()
    trees = build_all_trees(m, deferred_acceptance(m), 0)
    g = build_couples_graph(m, trees)
    assert g.edge_list() == [(0, 1), (1, 0)]
    assert find_cycle(g) == [0, 1]
    assert distinct_cycle_witness(g, [0, 1]) is not None
    with pytest.raises(CycleError) as err:
        topological_insertion_order(g)
    assert err.value.cycle == [0, 1]
    assert cycle_hospitals(g, [0, 1]) == [{0}, {1}]


def test_disjoint_trees_no_edges():
    hospitals = [Hospital.from_ranking(h, 1, [0, 1, 2, 3]) for h in range(4)]
    m = Market(hospitals, [], [Couple(0, 1, ((0, 1),)), Couple(2, 3, ((2, 3),))])
    trees = build_all_trees(m, deferred_acceptance(m), 0)
    g = build_couples_graph(m, trees)
    assert g.edges == {}
    assert weakly_connected_components(g) == [[0], [1]]
    assert find_cycle(g) is None
    assert topological_insertion_order(g) == (0, 1)


def test_mismatched_budgets(example):
    da = deferred_acceptance(example)
    trees = [build_influence_tree(example, da, 0, 1), build_influence_tree(example, da, 1, 2)]
    with pytest.raises(MarketError):
        build_couples_graph(example, trees)


# -- graph algorithms against networkx / union-find ------------------------------------------


@st.composite
def graphs(draw):
    n = draw(st.integers(0, 9))
    edges = draw(st.sets(st.tuples(st.integers(0, max(n - 1, 0)), st.integers(0, max(n - 1, 0))), max_size=20))
    g = CouplesGraph(list(range(n)))
    for a, b in edges:
        if a != b and n:
            g.edges[(a, b)] = [(0, a, b)]
    return g


def to_nx(g):
    G = nx.DiGraph()
    G.add_nodes_from(g.nodes)
    G.add_edges_from(g.edges)
    return G


def union_find_components(g):
    parent = {c: c for c in g.nodes}

    def root(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in g.edges:
        parent[root(a)] = root(b)
    groups = {}
    for c in g.nodes:
        groups.setdefault(root(c), []).append(c)
    return sorted(sorted(v) for v in groups.values())


@settings(max_examples=200, deadline=None)
@given(graphs())
def test_components_agree(g):
    comps = weakly_connected_components(g)
    assert sorted(comps) == union_find_components(g)
    assert sorted(sorted(c) for c in nx.weakly_connected_components(to_nx(g))) == sorted(comps)


@settings(max_examples=200, deadline=None)
@given(graphs())
def test_cycle_and_topological_order_agree(g):
    G = to_nx(g)
    cyc = find_cycle(g)
    if nx.is_directed_acyclic_graph(G):
        assert cyc is None
        order = topological_insertion_order(g)
        assert sorted(order) == g.nodes
        pos = {c: i for i, c in enumerate(order)}
        assert all(pos[a] < pos[b] for a, b in g.edges)
        assert list(order) == list(nx.lexicographical_topological_sort(G))
    else:
        assert cyc is not None
        for i, a in enumerate(cyc):
            assert (a, cyc[(i + 1) % len(cyc)]) in g.edges
        assert len(set(cyc)) == len(cyc)
        shortest = min(nx.shortest_path_length(G, b, a) + 1 for a, b in g.edges if nx.has_path(G, b, a))
        assert len(cyc) == shortest
        with pytest.raises(CycleError):
            topological_insertion_order(g)


def test_edgeless_graph_identity_order():
    g = CouplesGraph([0, 1, 2])
    assert topological_insertion_order(g) == (0, 1, 2)
    assert weakly_connected_components(g) == [[0], [1], [2]]


def test_shortest_cycles_use_distinct_hospitals():
    # on cycles whose trees never revisit a hospital, one witness hospital
    # per edge can be chosen without repeats
    checked = 0
    for cap, r in ((1, 1), (2, 2), (3, 3)):
        for seed in range(300):
            m = generate_market(GenParams(n=30, couples=4, seed=seed, capacity=cap))
            trees = build_all_trees(m, deferred_acceptance(m), r)
            g = build_couples_graph(m, trees)
            cyc = find_cycle(g)
            if cyc is None or any(trees[c].self_intersecting for c in cyc):
                continue
            checked += 1
            w = distinct_cycle_witness(g, cyc)
            assert w is not None and len(set(w)) == len(cyc)
    assert checked >= 20


# -- containment and insertion order ---------------------------------------------------


def test_containment_example(example):
    da = deferred_acceptance(example)
    trees = build_all_trees(example, da, 1)
    for pi in ((0, 1), (1, 0)):
        rep = verify_influence_containment(example, soda(example, pi), trees)
        assert rep.ok and rep.checked == 2


def test_containment_couple_free_vacuous():
    m = generate_market(GenParams(n=50, couples=0, seed=1))
    rep = verify_influence_containment(m, soda(m), [])
    assert rep.ok and rep.checked == 0


def test_topological_insertion_has_no_restarts_when_conditions_hold():
    hits = 0
    for seed in range(150):
        m = generate_market(GenParams(n=300, epsilon=0.7, lam=10, seed=seed, single_list_cap=64))
        r = math.ceil(4 / 0.7)
        trees = build_all_trees(m, deferred_acceptance(m), r)
        g = build_couples_graph(m, trees)
        if find_cycle(g) is not None or any(len(hs) > 1 for hs in intersections(trees).values()):
            continue
        out = soda(m, topological_insertion_order(g))
        if verify_influence_containment(m, out, trees).ok:
            hits += 1
            assert out.restarts == 0
    assert hits >= 50


def test_default_budget():
    m = generate_market(GenParams(n=20, epsilon=0.5, seed=0))
    assert default_budget(m) == 8
    assert default_budget(generate_market(GenParams(n=20, couples=1, seed=0))) == 4


def test_exports(example):
    da = deferred_acceptance(example)
    trees = build_all_trees(example, da, 1)
    data = json.loads(trees_to_json(trees))
    assert [t["couple"] for t in data] == [0, 1]
    assert all({"hospital", "inserter", "parent", "budget"} == set(e) for t in data for e in t["entries"])
    dot = build_couples_graph(example, trees).to_dot()
    assert dot.startswith("digraph couples {") and "c1 -> c0" in dot
