"""Array-backed solution state shared by the operators and the compiled kernels."""

from __future__ import annotations

import weakref
from dataclasses import dataclass

import numpy as np

from ..core import SEARCH_PENALTIES, Instance, PenaltyWeights, Solution, StructuralError, structural_errors
from . import _kernels as K

_INST_CACHE: "weakref.WeakKeyDictionary[Instance, K.InstData]" = weakref.WeakKeyDictionary()


def kernel_data(instance: Instance) -> K.InstData:
    """Pack an instance into the flat arrays the kernels consume (cached per instance)."""
    data = _INST_CACHE.get(instance)
    if data is None:
        v = instance.variant
        nd = np.column_stack([
            instance.demand,
            instance.is_backhaul.astype(np.float64),
            instance.tw_early,
            instance.tw_late,
            instance.service_time,
        ]).astype(np.float64)
        params = np.zeros(8)
        params[K.P_CAPACITY] = instance.capacity
        params[K.P_LIMIT] = instance.route_limit
        params[K.P_OPEN] = v.open_routes
        params[K.P_TW] = v.time_windows
        params[K.P_DURATION] = v.duration_limit
        params[K.P_BACKHAUL] = v.backhaul
        params[K.P_DEPOTS] = instance.m
        params[K.P_METRIC] = is_metric(instance.dist)
        data = K.InstData(np.ascontiguousarray(instance.dist, dtype=np.float64), np.ascontiguousarray(nd), params)
        _INST_CACHE[instance] = data
    return data


def is_metric(dist: np.ndarray, tol: float = 1e-9) -> bool:
    """True when the matrix satisfies the triangle inequality."""
    for k in range(len(dist)):
        if np.any(dist[:, k, None] + dist[None, k, :] < dist - tol):
            return False
    return True


class SearchState:
    """Mutable solution held as fixed-size route slots.

    There are ``n + m`` slots so every customer could sit in its own route and
    a free slot always exists for opening a route at any depot.
    """

    def __init__(self, instance: Instance, solution: Solution, penalties: PenaltyWeights = SEARCH_PENALTIES,
                 allow_missing: bool = False):
        errors = structural_errors(solution, instance)
        if allow_missing:
            errors = [e for e in errors if not e.startswith("customers never visited")]
        if errors:
            raise StructuralError("; ".join(errors))
        self.instance = instance
        self.inst = kernel_data(instance)
        n, m, g = instance.n, instance.m, instance.g
        slots = n + m
        width = n + 2
        self.routes = np.full((slots, width), -1, dtype=np.int64)
        self.rlen = np.zeros(slots, dtype=np.int64)
        self.rdepot = np.zeros(slots, dtype=np.int64)
        self.rcost = np.zeros(slots, dtype=np.float64)
        self.node_route = np.full(g, -1, dtype=np.int64)
        self.node_pos = np.full(g, -1, dtype=np.int64)
        self.buf_a = np.zeros(width, dtype=np.int64)
        self.buf_b = np.zeros(width, dtype=np.int64)
        self.buf_c = np.zeros(width, dtype=np.int64)
        self.move = np.zeros(K.MOVE_SIZE, dtype=np.int64)
        self.st = K.StateData(self.routes, self.rlen, self.rdepot, self.rcost, self.node_route, self.node_pos)
        self.w = penalties.as_array()
        r = 0
        for route in solution.routes:
            if not route.customers:
                continue
            self.rdepot[r] = route.depot
            K.set_route(*self.inst, self.w, *self.st, r, np.asarray(route.customers, dtype=np.int64), len(route.customers))
            r += 1
        # Free slots start at depot 0; opening a route sets the depot explicitly.

    def set_penalties(self, penalties: PenaltyWeights) -> None:
        self.w = penalties.as_array()
        K.refresh_costs(*self.inst, self.w, *self.st)

    @property
    def cost(self) -> float:
        """Penalized cost under the active weights."""
        return float(self.rcost.sum())

    def route_of(self, customer: int) -> int:
        return int(self.node_route[customer])

    def nonempty_routes(self) -> list[int]:
        return [int(r) for r in np.flatnonzero(self.rlen)]

    def to_solution(self) -> Solution:
        rs = self.nonempty_routes()
        return Solution.from_lists(
            [self.routes[r, : self.rlen[r]].tolist() for r in rs], [int(self.rdepot[r]) for r in rs]
        )


@dataclass(frozen=True)
class MoveResult:
    delta: float
    applicable: bool
    applied: bool


def _finish(state: SearchState, delta: float, force: bool, buffers: tuple) -> MoveResult:
    if np.isnan(delta):
        return MoveResult(float("nan"), False, False)
    apply = force or delta < -K.EPS
    if apply:
        K.commit(*state.inst, state.w, *state.st, state.move, *buffers)
    return MoveResult(float(delta), True, apply)


def op_exchange_xm(state: SearchState, a: int, b: int, X: int, M: int, force: bool = False) -> MoveResult:
    """(X, M)-exchange between the segments starting at customers ``a`` and ``b``."""
    if X < 1 or not 0 <= M <= X:
        raise ValueError(f"need X >= 1 and 0 <= M <= X, got X={X}, M={M}")
    delta = K.eval_exchange(*state.inst, state.w, *state.st, a, b, X, M, False, state.buf_a, state.buf_b, state.move)
    return _finish(state, delta, force, (state.buf_a, state.buf_b, state.buf_c))


def op_move_two_reversed(state: SearchState, a: int, b: int, force: bool = False) -> MoveResult:
    delta = K.eval_move_two_reversed(*state.inst, state.w, *state.st, a, b, state.buf_a, state.buf_b, state.move)
    return _finish(state, delta, force, (state.buf_a, state.buf_b, state.buf_c))


def op_two_opt(state: SearchState, a: int, b: int, force: bool = False) -> MoveResult:
    delta = K.eval_two_opt(*state.inst, state.w, *state.st, a, b, state.buf_a, state.buf_b, state.move)
    return _finish(state, delta, force, (state.buf_a, state.buf_b, state.buf_c))


def op_relocate_star(state: SearchState, route_i: int, route_j: int, force: bool = False) -> MoveResult:
    if route_i == route_j:
        raise ValueError("RELOCATE* needs two distinct routes")
    delta = K.eval_relocate_star(
        *state.inst, state.w, *state.st, route_i, route_j, state.buf_a, state.buf_b, state.buf_c, state.move
    )
    return _finish(state, delta, force, (state.buf_a, state.buf_b, state.buf_c))


def op_swap_star(state: SearchState, route_i: int, route_j: int, force: bool = False) -> MoveResult:
    if route_i == route_j:
        raise ValueError("SWAP* needs two distinct routes")
    delta = K.eval_swap_star(
        *state.inst, state.w, *state.st, route_i, route_j, state.buf_a, state.buf_b, state.buf_c, state.move
    )
    return _finish(state, delta, force, (state.buf_a, state.buf_b, state.buf_c))
