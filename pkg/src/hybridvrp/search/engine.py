"""Search sweep, penalty repair, random construction and the iterated main loop."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np

from ..core import (
    FIX_PENALTIES,
    SEARCH_PENALTIES,
    Instance,
    InfeasibleInstanceError,
    PenaltyWeights,
    Solution,
    check_feasibility,
    solution_cost,
)
from . import _kernels as K
from .crossover import ox_crossover, reinsert, srex_crossover
from .neighbors import DEFAULT_GAMMA, NeighborLists, build_granular_neighbors
from .state import SearchState


@dataclass
class LSConfig:
    iterations: int = 50
    x_max: int = 3
    gamma: int = DEFAULT_GAMMA
    search_penalties: PenaltyWeights = SEARCH_PENALTIES
    fix_penalties: PenaltyWeights = FIX_PENALTIES
    seed: int | None = None
    time_budget: float | None = None  # seconds; caps iterations by wall clock when set

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not 1 <= self.x_max <= 3:
            raise ValueError("x_max must be in 1..3")
        fw, sw = self.fix_penalties.as_array(), self.search_penalties.as_array()
        if np.any(fw <= sw):
            raise ValueError("fix weights must exceed search weights")


def node_operator_codes(x_max: int = 3) -> np.ndarray:
    codes = [k for k, (x, _) in enumerate(K.EXCHANGE_XM) if x <= x_max]
    if x_max >= 2:
        codes.append(K.OP_MOVE_TWO_REVERSED)
    codes.append(K.OP_TWO_OPT)
    return np.array(codes, dtype=np.int64)


def search_state(state: SearchState, neighbors: NeighborLists, rng: np.random.Generator,
                 x_max: int = 3) -> int:
    """Run the operator sweep in place on ``state``; returns the number of applied moves."""
    inst = state.instance
    node_ops = rng.permutation(node_operator_codes(x_max))
    if inst.variant.tsp_mode:
        route_ops = np.zeros(0, dtype=np.int64)
    else:
        route_ops = rng.permutation(np.array([K.ROUTE_OP_RELOCATE, K.ROUTE_OP_SWAP], dtype=np.int64))
    customers = np.arange(inst.m, inst.g, dtype=np.int64)
    seed = int(rng.integers(0, 2**31 - 1))
    return int(K.search_kernel(
        *state.inst, state.w, *state.st, customers, neighbors.array, node_ops, route_ops,
        not inst.variant.tsp_mode, seed, state.buf_a, state.buf_b, state.buf_c, state.move,
    ))


def search(solution: Solution, instance: Instance, neighbors: NeighborLists | None = None,
           penalties: PenaltyWeights = SEARCH_PENALTIES, rng: np.random.Generator | None = None,
           x_max: int = 3) -> Solution:
    """Apply improving moves until no operator finds one."""
    rng = rng if rng is not None else np.random.default_rng()
    neighbors = neighbors or build_granular_neighbors(instance)
    state = SearchState(instance, solution, penalties)
    search_state(state, neighbors, rng, x_max)
    return state.to_solution()


# ---------------------------------------------------------------------------
# Repair


def assert_serviceable(instance: Instance) -> None:
    """Raise if some customer cannot be served even by a dedicated vehicle.

    With backhauls, each backhaul customer also needs a linehaul it can follow.
    """
    for c in instance.customers:
        if instance.demand[c] > instance.capacity:
            raise InfeasibleInstanceError(
                f"customer {c} demand {instance.demand[c]:g} exceeds capacity {instance.capacity:g}"
            )
    v = instance.variant
    if not (v.time_windows or v.duration_limit or v.backhaul):
        return
    from .state import kernel_data

    inst_data = kernel_data(instance)
    seq = np.zeros(1, dtype=np.int64)
    for c in instance.customers if (v.time_windows or v.duration_limit) else ():
        seq[0] = c
        ok = False
        for depot in instance.depots:
            _, _, twv, dex, _ = K.seq_components(*inst_data, seq, 1, depot)
            if twv <= K.FEAS_TOL and dex <= K.FEAS_TOL:
                ok = True
                break
        if not ok:
            raise InfeasibleInstanceError(f"customer {c} cannot be served on its own from any depot")
    if v.backhaul:
        # A backhaul may not open a route, so some linehaul must be able to precede it.
        linehauls = [c for c in instance.customers if not instance.is_backhaul[c]]
        pair = np.zeros(2, dtype=np.int64)
        for b in instance.customers:
            if not instance.is_backhaul[b]:
                continue
            pair[1] = b
            ok = False
            for lh in linehauls:
                pair[0] = lh
                if any(K.seq_feasible(*inst_data, pair, 2, depot) for depot in instance.depots):
                    ok = True
                    break
            if not ok:
                raise InfeasibleInstanceError(f"backhaul customer {b} cannot follow any linehaul customer")


def _eject_and_reinsert(state: SearchState) -> Solution | None:
    inst = state.instance
    data = state.inst
    ejected: list[int] = []
    routes = []
    for r in state.nonempty_routes():
        seq = state.routes[r, : state.rlen[r]].tolist()
        depot = int(state.rdepot[r])
        while seq and not K.seq_feasible(*data, np.asarray(seq, dtype=np.int64), len(seq), depot):
            best_k, best_cost = 0, math.inf
            for k in range(len(seq)):
                rest = np.asarray(seq[:k] + seq[k + 1:], dtype=np.int64)
                cost = K.seq_cost(*data, state.w, rest, len(rest), depot)
                if cost < best_cost:
                    best_k, best_cost = k, cost
            ejected.append(seq.pop(best_k))
        if seq:
            routes.append((depot, seq))
    if not ejected:
        return state.to_solution()
    base = Solution.from_lists([s for _, s in routes], [d for d, _ in routes])
    # Linehauls first so backhauls find routes to follow; big demands before small ones.
    order = sorted(ejected, key=lambda c: (bool(inst.is_backhaul[c]), -inst.demand[c], c))
    return reinsert(base, order, inst, FIX_PENALTIES, feasible_only=True)


def fix(solution: Solution, instance: Instance, neighbors: NeighborLists | None = None,
        rng: np.random.Generator | None = None, penalties: PenaltyWeights = FIX_PENALTIES,
        x_max: int = 3) -> Solution:
    """Return a feasible solution derived from ``solution`` or raise InfeasibleInstanceError."""
    assert_serviceable(instance)
    rng = rng if rng is not None else np.random.default_rng()
    neighbors = neighbors or build_granular_neighbors(instance)
    if check_feasibility(solution, instance):
        return solution.normalized()
    state = SearchState(instance, solution, penalties)
    search_state(state, neighbors, rng, x_max)
    out = state.to_solution()
    if check_feasibility(out, instance):
        return out
    repaired = _eject_and_reinsert(state)
    if repaired is not None and check_feasibility(repaired, instance):
        return repaired
    from ..solver import greedy_initial

    rebuilt = greedy_initial(instance)
    if not check_feasibility(rebuilt, instance):
        state = SearchState(instance, rebuilt, penalties)
        search_state(state, neighbors, rng, x_max)
        rebuilt = state.to_solution()
    if check_feasibility(rebuilt, instance):
        return rebuilt
    raise InfeasibleInstanceError("could not restore feasibility")


# ---------------------------------------------------------------------------
# Random construction


def make_random(instance: Instance, rng: np.random.Generator) -> Solution:
    """Capacity-feasible random solution: routes filled with random fitting customers."""
    custs = list(instance.customers)
    if instance.variant.tsp_mode:
        return Solution.from_lists([rng.permutation(custs).tolist()], [0])
    for c in custs:
        if instance.demand[c] > instance.capacity:
            raise InfeasibleInstanceError(f"customer {c} demand exceeds capacity")
    bh = instance.variant.backhaul
    is_bh = instance.is_backhaul
    dem = instance.demand
    Q = instance.capacity
    unvisited = custs
    routes, depots = [], []
    while unvisited:
        depot = int(rng.integers(instance.m)) if instance.variant.multi_depot else 0
        route: list[int] = []
        peak = last = 0.0
        while True:
            # Appending a linehaul raises every earlier load by its demand; a backhaul
            # only adds a new final load level.
            fits = [
                c for c in unvisited
                if ((peak + dem[c]) if not (bh and is_bh[c]) else max(peak, last + dem[c])) <= Q
            ]
            if not fits:
                break
            c = fits[int(rng.integers(len(fits)))]
            if bh and is_bh[c]:
                last += dem[c]
                peak = max(peak, last)
            else:
                peak += dem[c]
            route.append(c)
            unvisited = [u for u in unvisited if u != c]
        routes.append(route)
        depots.append(depot)
    return Solution.from_lists(routes, depots)


# ---------------------------------------------------------------------------
# Main loop


@dataclass
class LSResult:
    solution: Solution
    cost: float
    trace: list[tuple[int, float, float]] = field(default_factory=list)
    iterations: int = 0


def _feasible_cost(solution: Solution, instance: Instance) -> float:
    return solution_cost(solution, instance) if check_feasibility(solution, instance) else math.inf


def _perturb(best: Solution, instance: Instance, rng: np.random.Generator, config: LSConfig) -> Solution:
    other = make_random(instance, rng)
    if instance.variant.tsp_mode:
        tour = ox_crossover(best.customers(), other.customers(), rng)
        return Solution.from_lists([tour], [0])
    return srex_crossover(best, other, instance, rng, config.search_penalties)


def _refine(solution: Solution, instance: Instance, neighbors: NeighborLists, rng: np.random.Generator,
            config: LSConfig) -> Solution:
    state = SearchState(instance, solution, config.search_penalties)
    search_state(state, neighbors, rng, config.x_max)
    out = state.to_solution()
    if not check_feasibility(out, instance):
        try:
            out = fix(out, instance, neighbors, rng, config.fix_penalties, config.x_max)
        except InfeasibleInstanceError:
            # No feasible solution exists; keep the penalized optimum so callers see cost inf.
            pass
    return out


def run_local_search(initial: Solution, instance: Instance, config: LSConfig | None = None,
                     neighbors: NeighborLists | None = None) -> LSResult:
    """Iterated search around the incumbent, perturbed by crossover with random solutions."""
    config = config or LSConfig()
    rng = np.random.default_rng(config.seed)
    neighbors = neighbors or build_granular_neighbors(instance, config.gamma)
    start = time.perf_counter()

    def elapsed_ms() -> float:
        return (time.perf_counter() - start) * 1000.0

    best, best_cost = initial.normalized(), _feasible_cost(initial, instance)
    refined = _refine(initial, instance, neighbors, rng, config)
    cost = _feasible_cost(refined, instance)
    if cost < best_cost:
        best, best_cost = refined, cost
    trace = [(0, best_cost, elapsed_ms())]
    done = 0
    for it in range(1, config.iterations + 1):
        if config.time_budget is not None and elapsed_ms() >= config.time_budget * 1000.0:
            break
        child = _perturb(best, instance, rng, config)
        tau = _refine(child, instance, neighbors, rng, config)
        cost = _feasible_cost(tau, instance)
        if cost < best_cost:
            best, best_cost = tau, cost
        trace.append((it, best_cost, elapsed_ms()))
        done = it
    return LSResult(best, best_cost, trace, done)


def write_trace(trace, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "best_cost", "wall_clock_ms"])
        for it, cost, ms in trace:
            writer.writerow([it, repr(float(cost)), f"{ms:.3f}"])
