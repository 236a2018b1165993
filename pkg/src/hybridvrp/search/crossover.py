"""Perturbation operators: SREX for routed variants, OX for the TSP."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from ..core import SEARCH_PENALTIES, Instance, PenaltyWeights, Route, Solution
from . import _kernels as K
from .state import SearchState


def reinsert(solution: Solution, customers: Sequence[int], instance: Instance,
             penalties: PenaltyWeights = SEARCH_PENALTIES, feasible_only: bool = False) -> Solution | None:
    """Insert ``customers`` one by one at their least-cost position (new routes allowed).

    Returns None only when ``feasible_only`` is set and some customer has no
    feasible position.
    """
    state = SearchState(instance, solution, penalties, allow_missing=True)
    n_depots = 0 if instance.variant.tsp_mode else instance.m
    for c in customers:
        delta, slot, pos, depot = K.best_insertion(
            *state.inst, state.w, *state.st, int(c), feasible_only, n_depots, state.buf_a
        )
        if slot < 0:
            if feasible_only:
                return None
            raise RuntimeError("no insertion slot available")
        K.insert_at(*state.inst, state.w, *state.st, int(c), slot, pos, depot, state.buf_a)
    return state.to_solution()


def _pick_routes(routes: list[Route], rng: np.random.Generator) -> list[int]:
    k = int(rng.integers(1, math.ceil(len(routes) / 2) + 1))
    return sorted(rng.choice(len(routes), size=k, replace=False).tolist())


def srex_offspring(parent_a: Solution, parent_b: Solution, instance: Instance, rng: np.random.Generator,
                   penalties: PenaltyWeights = SEARCH_PENALTIES,
                   subsets: tuple[Sequence[int], Sequence[int]] | None = None) -> tuple[Solution, Solution]:
    """Build both SREX offspring. ``subsets`` fixes the chosen route indices (non-empty routes)."""
    ra = [r for r in parent_a.routes if r.customers]
    rb = [r for r in parent_b.routes if r.customers]
    if subsets is None:
        sa, sb = _pick_routes(ra, rng), _pick_routes(rb, rng)
    else:
        sa, sb = list(subsets[0]), list(subsets[1])
    cust_a = {c for i in sa for c in ra[i].customers}
    cust_b = {c for i in sb for c in rb[i].customers}
    kept = [r for i, r in enumerate(ra) if i not in set(sa)]

    # First offspring: B's routes verbatim; duplicates are stripped from A's remaining routes.
    os1 = [Route(r.depot, [c for c in r.customers if c not in cust_b]) for r in kept]
    os1 += [Route(r.depot, list(r.customers)) for r in (rb[i] for i in sb)]
    # Second offspring: A's remaining routes verbatim; B's routes lose customers served elsewhere.
    os2 = [Route(r.depot, list(r.customers)) for r in kept]
    os2 += [Route(r.depot, [c for c in r.customers if c in cust_a]) for r in (rb[i] for i in sb)]

    unserved = [c for c in sorted(cust_a - cust_b)]
    order = rng.permutation(len(unserved)) if unserved else []
    todo = [unserved[i] for i in order]
    off1 = reinsert(Solution([r for r in os1 if r.customers]), todo, instance, penalties)
    off2 = reinsert(Solution([r for r in os2 if r.customers]), todo, instance, penalties)
    return off1, off2


def srex_crossover(parent_a: Solution, parent_b: Solution, instance: Instance, rng: np.random.Generator,
                   penalties: PenaltyWeights = SEARCH_PENALTIES, subsets=None) -> Solution:
    """Selective route exchange; returns the better offspring (the first one on ties)."""
    off1, off2 = srex_offspring(parent_a, parent_b, instance, rng, penalties, subsets)
    c1 = SearchState(instance, off1, penalties).cost
    c2 = SearchState(instance, off2, penalties).cost
    return off2 if c2 < c1 else off1


def ox_crossover(tour_a: Sequence[int], tour_b: Sequence[int], rng: np.random.Generator | None = None,
                 segment: tuple[int, int] | None = None) -> list[int]:
    """Order crossover: keep ``tour_a[i:j]`` in place, fill the rest in ``tour_b`` order from ``j`` on."""
    a, b = list(tour_a), list(tour_b)
    if sorted(a) != sorted(b) or len(set(a)) != len(a):
        raise ValueError("parents must be permutations of the same node set")
    size = len(a)
    if size == 0:
        return []
    if segment is None:
        i, j = sorted(rng.integers(0, size + 1, size=2).tolist())
    else:
        i, j = segment
    if not 0 <= i <= j <= size:
        raise ValueError(f"bad segment {segment}")
    child: list[int | None] = [None] * size
    child[i:j] = a[i:j]
    taken = set(a[i:j])
    fill = [b[(j + k) % size] for k in range(size) if b[(j + k) % size] not in taken]
    slots = [(j + k) % size for k in range(size) if child[(j + k) % size] is None]
    for s, node in zip(slots, fill):
        child[s] = node
    return child  # type: ignore[return-value]
