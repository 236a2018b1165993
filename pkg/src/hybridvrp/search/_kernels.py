"""Compiled move kernels.

All moves are scored by rebuilding the touched routes in scratch buffers and
re-evaluating them in full, so every variant (backhauls, windows, duration
limits, open routes) is priced exactly by one function, :func:`seq_cost`.

State layout (see :class:`hybridvrp.search.state.SearchState`):

``routes[r, :rlen[r]]``  customer sequence of route slot ``r``
``rdepot[r]``            depot of slot ``r``
``rcost[r]``             penalized cost of slot ``r`` under the active weights
``node_route/node_pos``  location of every customer
"""

from __future__ import annotations

from collections import namedtuple

import numpy as np
from numba import njit

EPS = 1e-9
FEAS_TOL = 1e-9

# Instance data travels as three arrays: D (distances), ND (per-node rows of
# demand, backhaul flag, window start, window end, service time) and P (scalars,
# indexed by the P_* constants).  Plain array arguments keep the compiled calls
# free of per-call reference counting.
InstData = namedtuple("InstData", "D ND P")
StateData = namedtuple("StateData", "routes rlen rdepot rcost nroute npos")

P_CAPACITY, P_LIMIT, P_OPEN, P_TW, P_DURATION, P_BACKHAUL, P_DEPOTS, P_METRIC = range(8)
ND_DEMAND, ND_BACKHAUL, ND_EARLY, ND_LATE, ND_SERVICE = range(5)

# (X, M) pairs of the exchange family, indexed by node-operator code.
EXCHANGE_XM = np.array(
    [(1, 0), (2, 0), (3, 0), (1, 1), (2, 1), (3, 1), (2, 2), (3, 2), (3, 3)], dtype=np.int64
)
OP_MOVE_TWO_REVERSED = 9
OP_TWO_OPT = 10
ROUTE_OP_RELOCATE = 0
ROUTE_OP_SWAP = 1

# Layout of the ``move`` record filled by evaluators and consumed by commit():
# [n_routes, r1, len1, buf1, r2, len2, buf2]; buffer ids index (buf_a, buf_b, buf_c).
MOVE_SIZE = 7


@njit(cache=True, inline="always")
def seq_components(D, ND, P, seq, length, depot):
    """Return (distance, excess_load, tw_violation, duration_excess, backhaul_start)."""
    if length == 0:
        return 0.0, 0.0, 0.0, 0.0, 0.0
    d = D
    open_routes = P[P_OPEN] != 0
    tw = P[P_TW] != 0
    dur = P[P_DURATION] != 0
    bh = P[P_BACKHAUL] != 0

    lin = 0.0
    for k in range(length):
        c = seq[k]
        if not (bh and (ND[c, 1] != 0.0)):
            lin += ND[c, 0]
    load = lin
    peak = lin
    dist = 0.0
    svc = 0.0
    t = ND[depot, 2]
    twv = 0.0
    prev = depot
    for k in range(length):
        c = seq[k]
        dist += d[prev, c]
        if bh and (ND[c, 1] != 0.0):
            load += ND[c, 0]
        else:
            load -= ND[c, 0]
        if load > peak:
            peak = load
        if tw:
            t += d[prev, c]
            if t < ND[c, 2]:
                t = ND[c, 2]
            if t > ND[c, 3]:
                twv += t - ND[c, 3]
            t += ND[c, 4]
        svc += ND[c, 4]
        prev = c
    if not open_routes:
        dist += d[prev, depot]
        if tw:
            t += d[prev, depot]
            if t > ND[depot, 3]:
                twv += t - ND[depot, 3]
    excess = peak - P[P_CAPACITY]
    if excess < 0.0:
        excess = 0.0
    dex = 0.0
    if dur:
        dex = dist + svc - P[P_LIMIT]
        if dex < 0.0:
            dex = 0.0
    bhs = 1.0 if (bh and ND[seq[0], 1] != 0.0) else 0.0
    return dist, excess, twv, dex, bhs


@njit(cache=True, inline="always")
def seq_cost(D, ND, P, w, seq, length, depot):
    dist, excess, twv, dex, bhs = seq_components(D, ND, P, seq, length, depot)
    return dist + w[0] * (excess + bhs) + w[1] * twv + w[2] * dex


@njit(cache=True, inline="always")
def seq_feasible(D, ND, P, seq, length, depot):
    dist, excess, twv, dex, bhs = seq_components(D, ND, P, seq, length, depot)
    return excess <= FEAS_TOL and twv <= FEAS_TOL and dex <= FEAS_TOL and bhs == 0.0


@njit(cache=True)
def refresh_costs(D, ND, P, w, routes, rlen, rdepot, rcost, nroute, npos):
    for r in range(rlen.shape[0]):
        rcost[r] = seq_cost(D, ND, P, w, routes[r], rlen[r], rdepot[r])


@njit(cache=True, inline="always")
def _copy(src, i0, i1, dst, k, rev):
    if rev:
        for i in range(i1 - 1, i0 - 1, -1):
            dst[k] = src[i]
            k += 1
    else:
        for i in range(i0, i1):
            dst[k] = src[i]
            k += 1
    return k


@njit(cache=True)
def set_route(D, ND, P, w, routes, rlen, rdepot, rcost, nroute, npos, r, seq, length):
    for k in range(length):
        c = seq[k]
        routes[r, k] = c
        nroute[c] = r
        npos[c] = k
    rlen[r] = length
    rcost[r] = seq_cost(D, ND, P, w, routes[r], length, rdepot[r])


@njit(cache=True)
def commit(D, ND, P, w, routes, rlen, rdepot, rcost, nroute, npos, move, buf_a, buf_b, buf_c):
    for j in range(move[0]):
        r = move[1 + 3 * j]
        length = move[2 + 3 * j]
        which = move[3 + 3 * j]
        if which == 0:
            set_route(D, ND, P, w, routes, rlen, rdepot, rcost, nroute, npos, r, buf_a, length)
        elif which == 1:
            set_route(D, ND, P, w, routes, rlen, rdepot, rcost, nroute, npos, r, buf_b, length)
        else:
            set_route(D, ND, P, w, routes, rlen, rdepot, rcost, nroute, npos, r, buf_c, length)


@njit(cache=True)
def _set_move(move, nr, r1, l1, b1, r2, l2, b2):
    move[0] = nr
    move[1] = r1
    move[2] = l1
    move[3] = b1
    move[4] = r2
    move[5] = l2
    move[6] = b2


# ---------------------------------------------------------------------------
# Node-level operators


@njit(cache=True)
def eval_exchange(D, ND, P, w, routes, rlen, rdepot, rcost, nroute, npos, a, b, X, M, rev, buf_a, buf_b, move):
    """Swap the X-segment starting at ``a`` with the M-segment starting at ``b``.

    With ``M == 0`` the X-segment is moved right after ``b``; ``rev`` inserts it
    reversed.  Returns NaN when the move is inapplicable.
    """
    ra = nroute[a]
    rb = nroute[b]
    pa = npos[a]
    pb = npos[b]
    la = rlen[ra]
    lb = rlen[rb]
    if a == b or pa + X > la or (M > 0 and pb + M > lb):
        return np.nan
    A = routes[ra]
    B = routes[rb]
    if ra != rb:
        k = _copy(A, 0, pa, buf_a, 0, False)
        if M > 0:
            k = _copy(B, pb, pb + M, buf_a, k, False)
        k = _copy(A, pa + X, la, buf_a, k, False)
        n1 = k
        if M > 0:
            k = _copy(B, 0, pb, buf_b, 0, False)
            k = _copy(A, pa, pa + X, buf_b, k, rev)
            k = _copy(B, pb + M, lb, buf_b, k, False)
        else:
            k = _copy(B, 0, pb + 1, buf_b, 0, False)
            k = _copy(A, pa, pa + X, buf_b, k, rev)
            k = _copy(B, pb + 1, lb, buf_b, k, False)
        n2 = k
        _set_move(move, 2, ra, n1, 0, rb, n2, 1)
        new = seq_cost(D, ND, P, w, buf_a, n1, rdepot[ra]) + seq_cost(D, ND, P, w, buf_b, n2, rdepot[rb])
        return new - rcost[ra] - rcost[rb]

    if M > 0:
        if pa < pb:
            if pa + X > pb:
                return np.nan
            k = _copy(A, 0, pa, buf_a, 0, False)
            k = _copy(A, pb, pb + M, buf_a, k, False)
            k = _copy(A, pa + X, pb, buf_a, k, False)
            k = _copy(A, pa, pa + X, buf_a, k, rev)
            k = _copy(A, pb + M, la, buf_a, k, False)
        else:
            if pb + M > pa:
                return np.nan
            k = _copy(A, 0, pb, buf_a, 0, False)
            k = _copy(A, pa, pa + X, buf_a, k, rev)
            k = _copy(A, pb + M, pa, buf_a, k, False)
            k = _copy(A, pb, pb + M, buf_a, k, False)
            k = _copy(A, pa + X, la, buf_a, k, False)
    else:
        if pa <= pb < pa + X:
            return np.nan
        if pb < pa:
            k = _copy(A, 0, pb + 1, buf_a, 0, False)
            k = _copy(A, pa, pa + X, buf_a, k, rev)
            k = _copy(A, pb + 1, pa, buf_a, k, False)
            k = _copy(A, pa + X, la, buf_a, k, False)
        else:
            k = _copy(A, 0, pa, buf_a, 0, False)
            k = _copy(A, pa + X, pb + 1, buf_a, k, False)
            k = _copy(A, pa, pa + X, buf_a, k, rev)
            k = _copy(A, pb + 1, la, buf_a, k, False)
    _set_move(move, 1, ra, k, 0, -1, 0, 0)
    return seq_cost(D, ND, P, w, buf_a, k, rdepot[ra]) - rcost[ra]


@njit(cache=True)
def eval_move_two_reversed(D, ND, P, w, routes, rlen, rdepot, rcost, nroute, npos, a, b, buf_a, buf_b, move):
    pa = npos[a]
    ra = nroute[a]
    if pa + 1 >= rlen[ra]:
        return np.nan
    if b == routes[ra, pa + 1]:
        return np.nan
    return eval_exchange(D, ND, P, w, routes, rlen, rdepot, rcost, nroute, npos, a, b, 2, 0, True, buf_a, buf_b, move)


@njit(cache=True)
def eval_two_opt(D, ND, P, w, routes, rlen, rdepot, rcost, nroute, npos, a, b, buf_a, buf_b, move):
    """Intra-route reversal between ``a`` and ``b`` (both endpoint conventions)."""
    r = nroute[a]
    if nroute[b] != r or a == b:
        return np.nan
    p = npos[a]
    q = npos[b]
    if p > q:
        p, q = q, p
    R = routes[r]
    length = rlen[r]
    depot = rdepot[r]
    # Reverse (p, q]: edges after p and after q are replaced.
    k = _copy(R, 0, p + 1, buf_a, 0, False)
    k = _copy(R, p + 1, q + 1, buf_a, k, True)
    k = _copy(R, q + 1, length, buf_a, k, False)
    d1 = seq_cost(D, ND, P, w, buf_a, length, depot) - rcost[r]
    # Reverse [p, q]: edges before p and after q are replaced.
    k = _copy(R, 0, p, buf_b, 0, False)
    k = _copy(R, p, q + 1, buf_b, k, True)
    k = _copy(R, q + 1, length, buf_b, k, False)
    d2 = seq_cost(D, ND, P, w, buf_b, length, depot) - rcost[r]
    if d2 < d1:
        _set_move(move, 1, r, length, 1, -1, 0, 0)
        return d2
    _set_move(move, 1, r, length, 0, -1, 0, 0)
    return d1


@njit(cache=True)
def eval_node_op(D, ND, P, w, routes, rlen, rdepot, rcost, nroute, npos, op, a, b, buf_a, buf_b, move):
    if op < 9:
        return eval_exchange(
            D, ND, P, w, routes, rlen, rdepot, rcost, nroute, npos, a, b, EXCHANGE_XM[op, 0], EXCHANGE_XM[op, 1], False, buf_a, buf_b, move
        )
    if op == OP_MOVE_TWO_REVERSED:
        return eval_move_two_reversed(D, ND, P, w, routes, rlen, rdepot, rcost, nroute, npos, a, b, buf_a, buf_b, move)
    return eval_two_opt(D, ND, P, w, routes, rlen, rdepot, rcost, nroute, npos, a, b, buf_a, buf_b, move)


# ---------------------------------------------------------------------------
# Route-level operators


@njit(cache=True, inline="always")
def _without(R, length, pos, out):
    k = _copy(R, 0, pos, out, 0, False)
    return _copy(R, pos + 1, length, out, k, False)


@njit(cache=True, inline="always")
def _with(R, length, pos, c, out):
    k = _copy(R, 0, pos, out, 0, False)
    out[k] = c
    return _copy(R, pos, length, out, k + 1, False)


@njit(cache=True)
def _best_insert(D, ND, P, w, R, length, depot, c, out):
    """Cheapest position for ``c`` in ``R[:length]``; returns (cost, pos)."""
    best = np.inf
    best_pos = -1
    for pos in range(length + 1):
        _with(R, length, pos, c, out)
        cost = seq_cost(D, ND, P, w, out, length + 1, depot)
        if cost < best:
            best = cost
            best_pos = pos
    return best, best_pos


@njit(cache=True)
def eval_relocate_star(D, ND, P, w, routes, rlen, rdepot, rcost, nroute, npos, ri, rj, buf_a, buf_b, buf_c, move):
    """Best single-customer relocation between slots ``ri`` and ``rj`` (both directions)."""
    best = np.inf
    bu = -1
    bpos = -1
    bsrc = -1
    for direction in range(2):
        src = ri if direction == 0 else rj
        dst = rj if direction == 0 else ri
        ls = rlen[src]
        ld = rlen[dst]
        S = routes[src]
        T = routes[dst]
        for pu in range(ls):
            u = S[pu]
            _without(S, ls, pu, buf_a)
            removed = seq_cost(D, ND, P, w, buf_a, ls - 1, rdepot[src]) - rcost[src]
            ins, pos = _best_insert(D, ND, P, w, T, ld, rdepot[dst], u, buf_b)
            delta = removed + ins - rcost[dst]
            if delta < best:
                best = delta
                bu = pu
                bpos = pos
                bsrc = direction
    if bu < 0:
        return np.nan
    src = ri if bsrc == 0 else rj
    dst = rj if bsrc == 0 else ri
    ls = rlen[src]
    ld = rlen[dst]
    u = routes[src, bu]
    _without(routes[src], ls, bu, buf_a)
    _with(routes[dst], ld, bpos, u, buf_b)
    _set_move(move, 2, src, ls - 1, 0, dst, ld + 1, 1)
    return best


@njit(cache=True)
def _min_insert_distance(D, ND, P, R, length, skip, depot, c):
    """Cheapest distance-only insertion of ``c`` into ``R`` with position ``skip`` removed."""
    d = D
    best = np.inf
    prev = depot
    for k in range(length + 1):
        if k == skip:
            continue
        if k == length:
            if P[P_OPEN] != 0:
                extra = d[prev, c]
            else:
                extra = d[prev, c] + d[c, depot] - d[prev, depot]
        else:
            nxt = R[k]
            extra = d[prev, c] + d[c, nxt] - d[prev, nxt]
            prev = nxt
        if extra < best:
            best = extra
    return best


@njit(cache=True)
def eval_swap_star(D, ND, P, w, routes, rlen, rdepot, rcost, nroute, npos, ri, rj, buf_a, buf_b, buf_c, move):
    """Exchange u in ri with v in rj, each reinserted at its best position in the other route.

    On metric instances, inserting a customer never lowers distance and only a
    backhaul-first route can get cheaper penalties, so pairs whose removal gain
    plus cheapest distance-only insertions cannot beat the incumbent are skipped.
    """
    li = rlen[ri]
    lj = rlen[rj]
    if li == 0 or lj == 0:
        return np.nan
    I = routes[ri]
    J = routes[rj]
    di = rdepot[ri]
    dj = rdepot[rj]
    tmp_i = np.empty(li + 1, dtype=np.int64)
    tmp_j = np.empty(lj + 1, dtype=np.int64)
    rem_i = np.empty(li)
    rem_j = np.empty(lj)
    bonus_i = np.zeros(li)
    bonus_j = np.zeros(lj)
    bh = P[P_BACKHAUL] != 0
    for pu in range(li):
        _without(I, li, pu, tmp_i)
        rem_i[pu] = seq_cost(D, ND, P, w, tmp_i, li - 1, di)
        if bh and li > 1 and ND[tmp_i[0], 1] != 0.0:
            bonus_i[pu] = w[0]
    for pv in range(lj):
        _without(J, lj, pv, tmp_j)
        rem_j[pv] = seq_cost(D, ND, P, w, tmp_j, lj - 1, dj)
        if bh and lj > 1 and ND[tmp_j[0], 1] != 0.0:
            bonus_j[pv] = w[0]
    old = rcost[ri] + rcost[rj]
    best = np.inf
    bu = bv = bpu = bpv = -1
    for pu in range(li):
        u = I[pu]
        for pv in range(lj):
            v = J[pv]
            if P[P_METRIC] != 0.0 and bu >= 0:
                lb = (
                    rem_i[pu] + rem_j[pv] - old - bonus_i[pu] - bonus_j[pv]
                    + _min_insert_distance(D, ND, P, I, li, pu, di, v)
                    + _min_insert_distance(D, ND, P, J, lj, pv, dj, u)
                )
                if lb >= best - EPS:
                    continue
            _without(I, li, pu, tmp_i)
            _without(J, lj, pv, tmp_j)
            cost_i, pos_i = _best_insert(D, ND, P, w, tmp_i, li - 1, di, v, buf_c)
            cost_j, pos_j = _best_insert(D, ND, P, w, tmp_j, lj - 1, dj, u, buf_c)
            delta = cost_i + cost_j - old
            if delta < best:
                best = delta
                bu, bv, bpu, bpv = pu, pv, pos_i, pos_j
    u = I[bu]
    v = J[bv]
    _without(I, li, bu, tmp_i)
    _without(J, lj, bv, tmp_j)
    _with(tmp_i, li - 1, bpu, v, buf_a)
    _with(tmp_j, lj - 1, bpv, u, buf_b)
    _set_move(move, 2, ri, li, 0, rj, lj, 1)
    return best


@njit(cache=True)
def _free_slot(rlen):
    for r in range(rlen.shape[0]):
        if rlen[r] == 0:
            return r
    return -1


@njit(cache=True)
def eval_relocate_to_new(D, ND, P, w, routes, rlen, rdepot, rcost, nroute, npos, ri, depot, buf_a, buf_b, move):
    """Move the best customer of ``ri`` into a fresh route at ``depot``."""
    e = _free_slot(rlen)
    li = rlen[ri]
    if e < 0 or li == 0 or (li == 1 and rdepot[ri] == depot):
        return np.nan
    I = routes[ri]
    best = np.inf
    bpu = -1
    for pu in range(li):
        _without(I, li, pu, buf_a)
        buf_b[0] = I[pu]
        delta = (
            seq_cost(D, ND, P, w, buf_a, li - 1, rdepot[ri])
            + seq_cost(D, ND, P, w, buf_b, 1, depot)
            - rcost[ri]
        )
        if delta < best:
            best = delta
            bpu = pu
    _without(I, li, bpu, buf_a)
    buf_b[0] = I[bpu]
    rdepot[e] = depot
    _set_move(move, 2, ri, li - 1, 0, e, 1, 1)
    return best


# ---------------------------------------------------------------------------
# Search sweep


@njit(cache=True)
def node_phase(D, ND, P, w, routes, rlen, rdepot, rcost, nroute, npos, customers, neigh, node_ops, buf_a, buf_b, move):
    applied = 0
    improved = True
    while improved:
        improved = False
        order = np.random.permutation(customers)
        for a in order:
            for k in range(neigh.shape[1]):
                b = neigh[a, k]
                if b < 0:
                    break
                for op in node_ops:
                    delta = eval_node_op(D, ND, P, w, routes, rlen, rdepot, rcost, nroute, npos, op, a, b, buf_a, buf_b, move)
                    if delta < -EPS:
                        commit(D, ND, P, w, routes, rlen, rdepot, rcost, nroute, npos, move, buf_a, buf_b, buf_a)
                        applied += 1
                        improved = True
    return applied


@njit(cache=True)
def route_phase(D, ND, P, w, routes, rlen, rdepot, rcost, nroute, npos, route_ops, n_depots, allow_new, buf_a, buf_b, buf_c, move):
    applied = 0
    improved = True
    R = rlen.shape[0]
    while improved:
        improved = False
        for i in range(R):
            if rlen[i] == 0:
                continue
            for j in range(i + 1, R):
                if rlen[j] == 0:
                    continue
                for op in route_ops:
                    if rlen[i] == 0 or rlen[j] == 0:
                        break
                    if op == ROUTE_OP_RELOCATE:
                        delta = eval_relocate_star(D, ND, P, w, routes, rlen, rdepot, rcost, nroute, npos, i, j, buf_a, buf_b, buf_c, move)
                    else:
                        delta = eval_swap_star(D, ND, P, w, routes, rlen, rdepot, rcost, nroute, npos, i, j, buf_a, buf_b, buf_c, move)
                    if delta < -EPS:
                        commit(D, ND, P, w, routes, rlen, rdepot, rcost, nroute, npos, move, buf_a, buf_b, buf_c)
                        applied += 1
                        improved = True
            if allow_new and rlen[i] > 0:
                for d in range(n_depots):
                    delta = eval_relocate_to_new(D, ND, P, w, routes, rlen, rdepot, rcost, nroute, npos, i, d, buf_a, buf_b, move)
                    if delta < -EPS:
                        commit(D, ND, P, w, routes, rlen, rdepot, rcost, nroute, npos, move, buf_a, buf_b, buf_c)
                        applied += 1
                        improved = True
                    if rlen[i] == 0:
                        break
    return applied


@njit(cache=True)
def search_kernel(D, ND, P, w, routes, rlen, rdepot, rcost, nroute, npos, customers, neigh, node_ops, route_ops, allow_new, seed, buf_a, buf_b, buf_c, move):
    np.random.seed(seed)
    total = 0
    while True:
        total += node_phase(D, ND, P, w, routes, rlen, rdepot, rcost, nroute, npos, customers, neigh, node_ops, buf_a, buf_b, move)
        if route_ops.shape[0] == 0:
            break
        changed = route_phase(D, ND, P, w, routes, rlen, rdepot, rcost, nroute, npos, route_ops, int(P[P_DEPOTS]), allow_new, buf_a, buf_b, buf_c, move)
        total += changed
        if changed == 0:
            break
    return total


# ---------------------------------------------------------------------------
# Insertion


@njit(cache=True)
def best_insertion(D, ND, P, w, routes, rlen, rdepot, rcost, nroute, npos, c, feasible_only, n_depots, buf_a):
    """Cheapest insertion of customer ``c`` into any route, or a new route per depot.

    Returns ``(delta, slot, pos, depot)``; ``slot == -1`` when nothing qualifies.
    A new route is reported with ``pos == 0`` and its depot.
    """
    best = np.inf
    bslot = -1
    bpos = -1
    bdepot = -1
    R = rlen.shape[0]
    for r in range(R):
        length = rlen[r]
        if length == 0:
            continue
        depot = rdepot[r]
        for pos in range(length + 1):
            _with(routes[r], length, pos, c, buf_a)
            if feasible_only and not seq_feasible(D, ND, P, buf_a, length + 1, depot):
                continue
            delta = seq_cost(D, ND, P, w, buf_a, length + 1, depot) - rcost[r]
            if delta < best:
                best = delta
                bslot = r
                bpos = pos
                bdepot = depot
    e = _free_slot(rlen)
    if e >= 0 and n_depots > 0:
        buf_a[0] = c
        for depot in range(n_depots):
            if feasible_only and not seq_feasible(D, ND, P, buf_a, 1, depot):
                continue
            delta = seq_cost(D, ND, P, w, buf_a, 1, depot)
            if delta < best:
                best = delta
                bslot = e
                bpos = 0
                bdepot = depot
    return best, bslot, bpos, bdepot


@njit(cache=True)
def insert_at(D, ND, P, w, routes, rlen, rdepot, rcost, nroute, npos, c, slot, pos, depot, buf_a):
    length = rlen[slot]
    if length == 0:
        rdepot[slot] = depot
    _with(routes[slot], length, pos, c, buf_a)
    set_route(D, ND, P, w, routes, rlen, rdepot, rcost, nroute, npos, slot, buf_a, length + 1)
