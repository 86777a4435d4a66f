"""Stable matching with couples: DA, SoDA, influence trees and random markets."""

__version__ = "0.1.0"

from .market import (  # noqa: E402
    Couple,
    CoupleJointBlock,
    CoupleSplitBlock,
    Hospital,
    Market,
    MarketError,
    Matching,
    Single,
    SingleBlock,
    choice,
    find_blocks,
    is_stable,
    validate_matching,
)
from .engines import SodaOutcome, deferred_acceptance, direct_insertion, soda  # noqa: E402
from .influence import (  # noqa: E402
    CouplesGraph,
    CycleError,
    InfluenceTree,
    build_couples_graph,
    build_influence_tree,
    find_cycle,
    topological_insertion_order,
    verify_influence_containment,
    weakly_connected_components,
)
from .generators import (  # noqa: E402
    GenParams,
    ProcessStats,
    ResourceError,
    counterexample_market,
    exhaustive_stability_oracle,
    generate_market,
    l_pessimistic_da,
)
