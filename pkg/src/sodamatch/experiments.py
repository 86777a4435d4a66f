"""Monte Carlo sweeps over random markets, written out as commented CSV.

Every trial draws its market from a seed derived from the config seed and the
point it belongs to, so tables are reproducible byte for byte and adding a
point to a sweep leaves the other points unchanged.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import beta

from . import __version__
from .engines import CLASSIC, STABLE, deferred_acceptance, soda
from .generators import GenParams, generate_market
from .influence import (
    build_all_trees,
    build_couples_graph,
    distinct_cycle_witness,
    find_cycle,
    intersections,
    topological_insertion_order,
    verify_influence_containment,
    weakly_connected_components,
)
from .market import Couple, Hospital, Market, MarketError, Single, find_blocks, rank_of_assignment

RULES = ("share", "epsilon", "count")


@dataclass
class ExperimentConfig:
    """One sweep: every n in ``n_values`` crossed with every couple value.

    ``couple_rule`` is ``share`` (couples = value * n), ``epsilon``
    (couples = n ** (1 - value)) or ``count`` (couples = value).  Any n above
    ``max_n`` is scaled down to ``max_n`` with the couple count scaled by the
    same factor.
    """

    n_values: Sequence[int] = (500, 1000, 2000)
    couple_rule: str = "share"
    couple_values: Sequence[float] = (0.05,)
    trials: int = 600
    capacity: int = 3
    lam: float = 1.5
    fitness: bool = False
    mode: str = CLASSIC
    r: int | None = None
    seed: int = 0
    single_list_cap: int | None = 64
    couple_list_cap: int | None = None
    max_n: int | None = None

    def check(self) -> None:
        if self.trials < 1:
            raise MarketError("trials must be >= 1")
        if list(self.n_values) != sorted(set(self.n_values)) or not self.n_values:
            raise MarketError("n values must be strictly increasing")
        if self.couple_rule not in RULES:
            raise MarketError(f"couple rule must be one of {RULES}")

    def points(self) -> list[dict]:
        """The (n, couples) points of the sweep after desk-scale substitution."""
        self.check()
        out = []
        for n in self.n_values:
            for v in self.couple_values:
                if self.couple_rule == "share":
                    c = int(round(v * n))
                elif self.couple_rule == "epsilon":
                    c = int(round(n ** (1 - v)))
                else:
                    c = int(v)
                pt = {"n": n, "value": v, "couples": c, "requested_n": n, "requested_couples": c}
                if self.max_n is not None and n > self.max_n:
                    f = self.max_n / n
                    pt["n"] = self.max_n
                    pt["couples"] = int(round(c * f))
                out.append(pt)
        return out

    def params(self, pt: dict, trial: int) -> GenParams:
        eps = pt["value"] if self.couple_rule == "epsilon" else None
        return GenParams(
            n=pt["n"],
            couples=pt["couples"],
            epsilon=eps,
            capacity=self.capacity,
            lam=self.lam,
            fitness=self.fitness,
            single_list_cap=self.single_list_cap,
            couple_list_cap=self.couple_list_cap,
            seed=trial_seed(self.seed, pt["requested_n"], pt["requested_couples"], trial),
        )


def trial_seed(base: int, n: int, couples: int, trial: int) -> int:
    ss = np.random.SeedSequence([int(base) & (2**64 - 1), int(n), int(couples), int(trial)])
    return int(ss.generate_state(1, np.uint64)[0])


def clopper_pearson(k: int, n: int, level: float = 0.95) -> tuple[float, float]:
    """Exact binomial confidence interval for k successes out of n."""
    if n == 0:
        return (0.0, 1.0)
    a = (1 - level) / 2
    lo = 0.0 if k == 0 else float(beta.ppf(a, k, n - k + 1))
    hi = 1.0 if k == n else float(beta.ppf(1 - a, k + 1, n - k))
    return (lo, hi)


@dataclass
class Table:
    """A CSV table with comment header lines."""

    name: str
    columns: list[str]
    rows: list[list] = field(default_factory=list)
    header: list[str] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# sodamatch {__version__} {self.name}\n")
        for line in self.header:
            buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.rows:
            w.writerow([_fmt(x) for x in row])
        return buf.getvalue()

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())

    def column(self, name: str) -> list:
        i = self.columns.index(name)
        return [r[i] for r in self.rows]


def _fmt(x):
    if isinstance(x, float):
        return f"{x:.6f}"
    return x


def _config_header(cfg: ExperimentConfig, extra: dict | None = None) -> list[str]:
    d = asdict(cfg)
    d["n_values"] = list(cfg.n_values)
    d["couple_values"] = list(cfg.couple_values)
    if extra:
        d.update(extra)
    lines = ["config " + json.dumps(d, sort_keys=True)]
    for pt in cfg.points():
        if pt["n"] != pt["requested_n"]:
            lines.append(
                f"substitution n={pt['requested_n']}->{pt['n']} "
                f"couples={pt['requested_couples']}->{pt['couples']}"
            )
    return lines


class VerificationError(AssertionError):
    """A run reported success but its matching has blocks."""


def _verified(market: Market, out) -> None:
    if out.ok and find_blocks(market, out.matching):
        raise VerificationError(f"stable outcome with blocks (seed {market.params.get('seed')})")


# -- success rates ---------------------------------------------------------------


def success_rate_sweep(cfg: ExperimentConfig, records: list | None = None) -> Table:
    """Fraction of markets on which SoDA ends stable, per point, with 95% CIs.

    Every success is re-checked for blocks; a failed check raises.  Runs
    that raise are counted in the ``errors`` column.
    """
    tab = Table(
        "success_rate_sweep",
        ["n", "rule", "value", "couples", "trials", "successes", "errors", "fraction", "ci_low", "ci_high",
         "mean_restarts"],
        header=_config_header(cfg),
    )
    for pt in cfg.points():
        ok = errors = restarts = 0
        for t in range(cfg.trials):
            p = cfg.params(pt, t)
            try:
                m = generate_market(p)
                out = soda(m, mode=cfg.mode)
            except (MarketError, RecursionError) as exc:
                errors += 1
                if records is not None:
                    records.append({"seed": p.seed, "n": pt["n"], "couples": pt["couples"], "error": str(exc)})
                continue
            _verified(m, out)
            ok += out.ok
            restarts += out.restarts
            if records is not None:
                records.append(
                    {"seed": p.seed, "n": pt["n"], "couples": pt["couples"], "outcome": out.status,
                     "restarts": out.restarts}
                )
        done = cfg.trials - errors
        lo, hi = clopper_pearson(ok, done)
        tab.rows.append(
            [pt["n"], cfg.couple_rule, float(pt["value"]), pt["couples"], done, ok, errors,
             ok / done if done else 0.0, lo, hi, restarts / done if done else 0.0]
        )
    return tab


# -- rank histogram ---------------------------------------------------------------

HIST_K = 8


def rank_histogram(cfg: ExperimentConfig) -> Table:
    """Share of singles and couples matched to their k-th choice, k = 1..8,
    plus a tail bucket and the unassigned remainder.  Only successful runs
    contribute; shares are percentages of all doctors of that kind in them.
    """
    buckets = [str(k) for k in range(1, HIST_K + 1)] + [f">{HIST_K}", "unassigned"]
    counts = {"single": [0] * len(buckets), "couple": [0] * len(buckets)}
    used = failed = 0
    for pt in cfg.points():
        for t in range(cfg.trials):
            m = generate_market(cfg.params(pt, t))
            out = soda(m, mode=cfg.mode)
            _verified(m, out)
            if not out.ok:
                failed += 1
                continue
            used += 1
            mu = out.matching
            for s in m.singles:
                counts["single"][_bucket(rank_of_assignment(s.prefs, mu.singles[s.id]))] += 1
            for ci, c in enumerate(m.couples):
                counts["couple"][_bucket(rank_of_assignment(c.prefs, mu.couples[ci]))] += 1
    tab = Table(
        "rank_histogram",
        ["k", "singles_pct", "couples_pct"],
        header=_config_header(cfg, {"runs_used": used, "runs_failed": failed}),
    )
    tot_s = sum(counts["single"])
    tot_c = sum(counts["couple"])
    for i, b in enumerate(buckets):
        tab.rows.append(
            [b, 100.0 * counts["single"][i] / tot_s if tot_s else 0.0,
             100.0 * counts["couple"][i] / tot_c if tot_c else 0.0]
        )
    return tab


def _bucket(rank: int | None) -> int:
    if rank is None:
        return HIST_K + 1
    return min(rank, HIST_K + 1) - 1


# -- truthfulness ---------------------------------------------------------------------

DEVIATIONS = ("truncate", "swap", "promote")


def misreport(prefs: Sequence, kind: str, rng: np.random.Generator) -> tuple:
    """A manipulated copy of a preference list.

    ``truncate`` drops a random non-empty suffix, ``swap`` exchanges two of
    the first ten entries and ``promote`` moves one of the first ten entries
    to the top.  Lists too short to change come back unchanged.
    """
    prefs = list(prefs)
    L = len(prefs)
    if L < 2:
        return tuple(prefs)
    if kind == "truncate":
        return tuple(prefs[: int(rng.integers(1, L))])
    top = min(L, 10)
    i, j = (int(x) for x in rng.choice(top, 2, replace=False))
    if kind == "swap":
        prefs[i], prefs[j] = prefs[j], prefs[i]
        return tuple(prefs)
    if kind == "promote":
        k = max(i, j)
        return tuple([prefs[k]] + prefs[:k] + prefs[k + 1:])
    raise MarketError(f"unknown deviation {kind!r}")


def with_prefs(market: Market, single: int | None = None, couple: int | None = None, prefs=None) -> Market:
    """Copy of ``market`` where one single or one couple reports ``prefs``."""
    singles = market.singles
    couples = market.couples
    if single is not None:
        singles = list(singles)
        i = market.single_index[single]
        singles[i] = Single(single, tuple(prefs))
    if couple is not None:
        couples = list(couples)
        c = couples[couple]
        couples[couple] = Couple(c.first, c.second, tuple(prefs))
    new = Market.__new__(Market)
    new.__dict__.update(market.__dict__)
    new.singles = singles
    new.couples = couples
    return new


def couple_free(market: Market) -> Market:
    """The same market with the couples removed (singles must hold ids 0..n-1)."""
    n = len(market.singles)
    if sorted(market.single_index) != list(range(n)):
        raise MarketError("couple-free view needs singles numbered 0..n-1")
    hospitals = [Hospital(h.id, h.capacity, h.rank[:n]) for h in market.hospitals]
    return Market(hospitals, market.singles, [], dict(market.params, couples=0))


def _rank(prefs, assigned) -> float:
    r = rank_of_assignment(prefs, assigned)
    return math.inf if r is None else r


def truthfulness_probe(cfg: ExperimentConfig, deviations: int = 5, control: bool = True) -> Table:
    """How often a sampled single or couple does strictly better by misreporting.

    Per trial one single and one couple are drawn; each reports ``deviations``
    manipulated lists (cycling through truncation, swap and promotion).  The
    achieved place is judged on the true list.  Pairs of runs where either
    fails are excluded and counted.  With ``control`` the same probe runs on
    the couple-free version of each market, where DA is strategy-proof.
    """
    stats: dict[tuple[str, str], list[int]] = {}
    for pop in ("single", "couple") + (("control-single",) if control else ()):
        for kind in DEVIATIONS + ("all",):
            stats[(pop, kind)] = [0, 0, 0]  # compared, gains, excluded
    for pt in cfg.points():
        for t in range(cfg.trials):
            p = cfg.params(pt, t)
            m = generate_market(p)
            rng = np.random.default_rng([p.seed & (2**63 - 1), 1])
            truth = soda(m, mode=cfg.mode)
            _probe(m, truth, "single", "couple", deviations, rng, cfg, stats)
            if control:
                free = couple_free(m)
                _probe(free, soda(free, mode=cfg.mode), "control-single", None, deviations, rng, cfg, stats)
    tab = Table(
        "truthfulness_probe",
        ["population", "deviation", "compared", "gains", "excluded", "frequency", "ci_low", "ci_high"],
        header=_config_header(cfg, {"deviations": deviations}),
    )
    for (pop, kind), (n, g, x) in stats.items():
        lo, hi = clopper_pearson(g, n)
        tab.rows.append([pop, kind, n, g, x, g / n if n else 0.0, lo, hi])
    return tab


def _probe(m, truth, s_pop, c_pop, deviations, rng, cfg, stats):
    targets = []
    if m.singles:
        targets.append((s_pop, "single", m.singles[int(rng.integers(len(m.singles)))].id))
    if c_pop and m.couples:
        targets.append((c_pop, "couple", int(rng.integers(len(m.couples)))))
    for pop, what, who in targets:
        true_prefs = m.singles[m.single_index[who]].prefs if what == "single" else m.couples[who].prefs
        for j in range(deviations):
            kind = DEVIATIONS[j % len(DEVIATIONS)]
            fake = misreport(true_prefs, kind, rng)
            if not truth.ok:
                stats[(pop, kind)][2] += 1
                stats[(pop, "all")][2] += 1
                continue
            if what == "single":
                lie = soda(with_prefs(m, single=who, prefs=fake), mode=cfg.mode)
            else:
                lie = soda(with_prefs(m, couple=who, prefs=fake), mode=cfg.mode)
            if not lie.ok:
                stats[(pop, kind)][2] += 1
                stats[(pop, "all")][2] += 1
                continue
            if what == "single":
                before = _rank(true_prefs, truth.matching.singles[who])
                after = _rank(true_prefs, lie.matching.singles[who])
            else:
                before = _rank(true_prefs, truth.matching.couples[who])
                after = _rank(true_prefs, lie.matching.couples[who])
            gain = int(after < before)
            for key in ((pop, kind), (pop, "all")):
                stats[key][0] += 1
                stats[key][1] += gain


# -- influence diagnostics -----------------------------------------------------------------


def _budget(cfg: ExperimentConfig, pt: dict) -> int:
    if cfg.r is not None:
        return cfg.r
    if cfg.couple_rule == "epsilon" and pt["value"] > 0:
        return math.ceil(4 / pt["value"])
    return 4


@dataclass
class GraphStats:
    tree_sizes: list[int]
    components: list[list[int]]
    cycle: list[int] | None
    twice: bool
    self_intersecting: int
    order: tuple[int, ...] | None
    distinct_witness: bool = True


def graph_stats(m: Market, r: int):
    da = deferred_acceptance(m)
    trees = build_all_trees(m, da, r)
    g = build_couples_graph(m, trees)
    comps = weakly_connected_components(g)
    cyc = find_cycle(g)
    twice = any(len(hs) >= 2 for hs in intersections(trees).values())
    order = None if cyc is not None else topological_insertion_order(g)
    distinct = cyc is None or distinct_cycle_witness(g, cyc) is not None
    st = GraphStats(
        [len(t) for t in trees], comps, cyc, twice, sum(t.self_intersecting for t in trees), order, distinct
    )
    return st, trees, g


def graph_diagnostics_sweep(cfg: ExperimentConfig) -> Table:
    """Influence-tree and couples-graph statistics per point.

    ``component_bound`` is ceil(3/epsilon) under the epsilon rule (else 0,
    meaning not applicable) and ``over_bound`` counts trials whose largest
    component exceeds it.  ``containment`` is the fraction of trials where
    every hospital a couple touched during SoDA lies in its tree.
    """
    tab = Table(
        "graph_diagnostics_sweep",
        ["n", "rule", "value", "couples", "trials", "r", "mean_tree", "max_tree", "mean_max_component",
         "max_component", "component_bound", "over_bound", "cycle_freq", "cycles_without_distinct_witness", "twice_freq",
         "self_intersect_freq", "containment"],
        header=_config_header(cfg),
    )
    for pt in cfg.points():
        r = _budget(cfg, pt)
        bound = math.ceil(3 / pt["value"]) if cfg.couple_rule == "epsilon" and pt["value"] > 0 else 0
        sizes: list[int] = []
        maxcomp: list[int] = []
        cycles = twice = selfi = over = contained = nodistinct = 0
        for t in range(cfg.trials):
            m = generate_market(cfg.params(pt, t))
            st, trees, _ = graph_stats(m, r)
            sizes.extend(st.tree_sizes)
            mc = max((len(c) for c in st.components), default=0)
            maxcomp.append(mc)
            over += bool(bound) and mc > bound
            cycles += st.cycle is not None
            nodistinct += not st.distinct_witness
            twice += st.twice
            selfi += st.self_intersecting > 0
            out = soda(m, mode=cfg.mode)
            _verified(m, out)
            contained += verify_influence_containment(m, out, trees).ok
        T = cfg.trials
        tab.rows.append(
            [pt["n"], cfg.couple_rule, float(pt["value"]), pt["couples"], T, r,
             float(np.mean(sizes)) if sizes else 0.0, max(sizes, default=0),
             float(np.mean(maxcomp)), max(maxcomp, default=0), bound, over,
             cycles / T, nodistinct, twice / T, selfi / T, contained / T]
        )
    return tab


def topological_insertion_check(
    cfg: ExperimentConfig, wanted: int = 200, max_attempts: int | None = None, exceptions: list | None = None
) -> Table:
    """Seed SoDA with the topological insertion order on eligible markets.

    A market is eligible when its couples graph is acyclic, no two trees
    meet at two or more hospitals and every weak component is at most
    ceil(3/epsilon) couples.  Markets are drawn from the first point of
    ``cfg`` until ``wanted`` eligible ones are found.  Each eligible market
    gets a row; runs that restart are appended to ``exceptions`` together
    with their full trace.
    """
    pt = cfg.points()[0]
    r = _budget(cfg, pt)
    eps = pt["value"] if cfg.couple_rule == "epsilon" else None
    bound = math.ceil(3 / eps) if eps else math.inf
    limit = max_attempts if max_attempts is not None else 20 * wanted
    tab = Table(
        "topological_insertion_check",
        ["trial", "seed", "couples", "largest_component", "restarts", "status", "zero_restarts"],
        header=_config_header(cfg, {"wanted": wanted, "r": r}),
    )
    skipped = 0
    t = 0
    while len(tab.rows) < wanted and t < limit:
        p = cfg.params(pt, t)
        m = generate_market(p)
        st, trees, g = graph_stats(m, r)
        big = max((len(c) for c in st.components), default=0)
        if st.cycle is not None or st.twice or big > bound:
            skipped += 1
            t += 1
            continue
        out = soda(m, st.order, mode=cfg.mode)
        _verified(m, out)
        zero = out.status == STABLE and out.restarts == 0
        tab.rows.append([t, p.seed, len(m.couples), big, out.restarts, out.status, int(zero)])
        if not zero and exceptions is not None:
            exceptions.append({"trial": t, "seed": p.seed, "order": list(st.order), "status": out.status,
                               "trace": out.trace_records()})
        t += 1
    tab.header.append(f"attempts={t} skipped={skipped} eligible={len(tab.rows)}")
    return tab
