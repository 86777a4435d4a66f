"""Command line entry point.

Exit codes: 0 success, 1 when the algorithm reports no solution (SoDA
failure, unstable matching, no stable matching exists), 2 on bad input.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict

from . import __version__
from .engines import MODES, soda
from .experiments import (
    ExperimentConfig,
    graph_diagnostics_sweep,
    rank_histogram,
    success_rate_sweep,
    topological_insertion_check,
    truthfulness_probe,
)
from .generators import GenParams, ResourceError, exhaustive_stability_oracle, generate_market, l_pessimistic_da
from .influence import (
    build_all_trees,
    build_couples_graph,
    default_budget,
    find_cycle,
    topological_insertion_order,
    trees_to_json,
    weakly_connected_components,
)
from .market import Market, MarketError, Matching, find_blocks
from .engines import deferred_acceptance


class InputError(Exception):
    pass


def _load_json(path: str):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc


def load_market(path: str) -> Market:
    data = _load_json(path)
    try:
        return Market.from_dict(data)
    except MarketError as exc:
        raise InputError(f"{path}:1: {exc}") from exc


def load_matching(market: Market, path: str) -> Matching:
    data = _load_json(path)
    try:
        return Matching.from_dict(market, data)
    except MarketError as exc:
        raise InputError(f"{path}:1: {exc}") from exc


def _emit(text: str, out: str | None) -> None:
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _echo(args) -> None:
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    print("config: " + json.dumps(cfg, sort_keys=True), file=sys.stderr)


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x]
    except ValueError as exc:
        raise InputError(f"bad number list {text!r}") from exc


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x]
    except ValueError as exc:
        raise InputError(f"bad integer list {text!r}") from exc


# -- subcommands ---------------------------------------------------------------------


def cmd_generate(args) -> int:
    p = GenParams(
        n=args.n,
        couples=args.couples,
        alpha=args.alpha,
        epsilon=args.epsilon,
        hospitals=args.hospitals,
        capacity=args.capacity,
        lam=args.lam,
        fitness=args.fitness,
        seed=args.seed,
        single_list_cap=args.list_cap,
    )
    m = generate_market(p)
    _emit(json.dumps(m.to_dict()) + "\n", args.out)
    print(f"generated {len(m.singles)} singles, {len(m.couples)} couples, {len(m.hospitals)} hospitals",
          file=sys.stderr)
    return 0


def cmd_solve(args) -> int:
    m = load_market(args.market)
    pi = _ints(args.pi) if args.pi else None
    out = soda(m, pi, mode=args.mode)
    print(f"{out.status} restarts={out.restarts} permutation={list(out.permutation)}")
    if args.trace:
        with open(args.trace, "w", encoding="utf-8") as fh:
            for rec in out.trace_records():
                fh.write(json.dumps(rec) + "\n")
    if not out.ok:
        if out.couple is not None:
            print(f"failing couple: {out.couple}")
        return 1
    _emit(json.dumps(out.matching.to_dict()) + "\n", args.out)
    return 0


def cmd_check(args) -> int:
    m = load_market(args.market)
    mu = load_matching(m, args.matching)
    try:
        blocks = find_blocks(m, mu)
    except MarketError as exc:
        raise InputError(f"{args.matching}: {exc}") from exc
    if not blocks:
        print("stable")
        return 0
    print(f"unstable: {len(blocks)} block(s)")
    for b in blocks:
        print(f"  {b}")
    return 1


def cmd_analyze(args) -> int:
    m = load_market(args.market)
    r = default_budget(m) if args.r is None else args.r
    da = deferred_acceptance(m)
    trees = build_all_trees(m, da, r)
    g = build_couples_graph(m, trees)
    comps = weakly_connected_components(g)
    cycle = find_cycle(g)
    print(f"r={r} couples={len(m.couples)}")
    print("tree sizes: " + " ".join(str(len(t)) for t in trees))
    print(f"self-intersecting trees: {sum(t.self_intersecting for t in trees)}")
    print(f"edges: {len(g.edges)}")
    print(f"largest component: {max((len(c) for c in comps), default=0)}")
    if cycle is None:
        print(f"acyclic; topological order {list(topological_insertion_order(g))}")
    else:
        print(f"cycle {cycle}")
    if args.out:
        with open(args.out + ".trees.json", "w", encoding="utf-8") as fh:
            fh.write(trees_to_json(trees) + "\n")
        with open(args.out + ".graph.dot", "w", encoding="utf-8") as fh:
            fh.write(g.to_dot())
    return 0


def cmd_oracle(args) -> int:
    m = load_market(args.market)
    try:
        mu = exhaustive_stability_oracle(m, args.budget)
    except ResourceError as exc:
        raise InputError(str(exc)) from exc
    if mu is None:
        print("none")
        return 1
    print("exists")
    if args.out:
        _emit(json.dumps(mu.to_dict()) + "\n", args.out)
    return 0


def cmd_pessimistic(args) -> int:
    m = load_market(args.market)
    try:
        st = l_pessimistic_da(m, args.l, args.seed)
    except MarketError as exc:
        raise InputError(str(exc)) from exc
    d = asdict(st)
    d.pop("visited_trace")
    text = json.dumps(d) + "\n"
    _emit(text, args.out)
    if args.out:
        sys.stdout.write(text)
    return 0


def cmd_experiment(args) -> int:
    if sum(x is not None for x in (args.couples, args.alpha, args.epsilon)) > 1:
        raise InputError("give only one of --couples, --alpha, --epsilon")
    if args.epsilon is not None:
        rule, values = "epsilon", _floats(args.epsilon)
    elif args.couples is not None:
        rule, values = "count", _floats(args.couples)
    else:
        rule, values = "share", _floats(args.alpha or "0.05")
    cfg = ExperimentConfig(
        n_values=tuple(_ints(args.n)),
        couple_rule=rule,
        couple_values=tuple(values),
        trials=args.trials,
        capacity=args.capacity,
        lam=args.lam,
        fitness=args.fitness,
        mode=args.mode,
        r=args.r,
        seed=args.seed,
        single_list_cap=args.list_cap,
        max_n=args.max_n,
    )
    cfg.check()
    if args.kind == "sweep":
        tab = success_rate_sweep(cfg)
    elif args.kind == "histogram":
        tab = rank_histogram(cfg)
    elif args.kind == "truthfulness":
        tab = truthfulness_probe(cfg, args.deviations)
    elif args.kind == "diagnostics":
        tab = graph_diagnostics_sweep(cfg)
    else:
        tab = topological_insertion_check(cfg, wanted=args.trials)
    _emit(tab.to_csv(), args.out)
    return 0


# -- parser --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sodamatch", description="Stable matching with couples.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def gen_flags(p, n_type=int, n_default=None):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--n", type=n_type, required=n_default is None, default=n_default)
        p.add_argument("--lambda", dest="lam", type=float, default=1.5)
        p.add_argument("--capacity", type=int, default=3)
        p.add_argument("--fitness", action="store_true")
        p.add_argument("--list-cap", type=int, default=None, help="truncate single lists")

    p = sub.add_parser("generate", help="write a random market")
    gen_flags(p)
    p.add_argument("--couples", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--hospitals", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("solve", help="run SoDA on a market file")
    p.add_argument("market")
    p.add_argument("--mode", choices=MODES, default="classic")
    p.add_argument("--pi", help="comma separated couple order")
    p.add_argument("--seed", type=int, default=0, help="unused by the deterministic engines")
    p.add_argument("--out")
    p.add_argument("--trace", help="write the eviction trace as JSON lines")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("check", help="stability verdict for a matching")
    p.add_argument("market")
    p.add_argument("matching")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("analyze", help="influence trees and couples graph")
    p.add_argument("market")
    p.add_argument("--r", type=int)
    p.add_argument("--out", help="prefix for .trees.json and .graph.dot")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("oracle", help="exhaustive search for a stable matching")
    p.add_argument("market")
    p.add_argument("--budget", type=int, default=10**7)
    p.add_argument("--out")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("pessimistic", help="run the l-pessimistic process")
    p.add_argument("market")
    p.add_argument("--l", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_pessimistic)

    p = sub.add_parser("experiment", help="Monte Carlo sweep to CSV")
    p.add_argument("kind", choices=("sweep", "histogram", "truthfulness", "diagnostics", "topological"))
    gen_flags(p, n_type=str)
    p.add_argument("--couples", help="comma separated couple counts")
    p.add_argument("--alpha", help="comma separated couple shares")
    p.add_argument("--epsilon", help="comma separated exponents, couples = n^(1-e)")
    p.add_argument("--trials", type=int, default=600)
    p.add_argument("--mode", choices=MODES, default="classic")
    p.add_argument("--r", type=int)
    p.add_argument("--max-n", type=int, help="scale larger n down to this")
    p.add_argument("--deviations", type=int, default=5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_experiment, list_cap=64)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    _echo(args)
    try:
        return args.func(args)
    except (InputError, MarketError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
