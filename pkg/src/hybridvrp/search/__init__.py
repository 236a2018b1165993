"""Granular local search: operators, repair, crossover and the iterated loop."""

from .crossover import ox_crossover, reinsert, srex_crossover, srex_offspring
from .engine import (
    LSConfig,
    LSResult,
    assert_serviceable,
    fix,
    make_random,
    run_local_search,
    search,
    search_state,
    write_trace,
)
from .neighbors import NeighborLists, build_granular_neighbors
from .state import (
    MoveResult,
    SearchState,
    op_exchange_xm,
    op_move_two_reversed,
    op_relocate_star,
    op_swap_star,
    op_two_opt,
)

__all__ = [
    "LSConfig", "LSResult", "MoveResult", "NeighborLists", "SearchState", "assert_serviceable",
    "build_granular_neighbors", "fix", "make_random", "op_exchange_xm", "op_move_two_reversed",
    "op_relocate_star", "op_swap_star", "op_two_opt", "ox_crossover", "reinsert", "run_local_search",
    "search", "search_state", "srex_crossover", "srex_offspring", "write_trace",
]
