"""Batched construction environment: masks, transitions and trajectory decoding.

All quantities live in the policy's normalized space: coordinates inside the
unit square, demands as fractions of capacity, times in distance units.
A batch holds ``B`` instances of one variant and size, each decoded by ``N``
trajectories in lockstep.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from ..core import Instance, Solution, VariantFlags
from ..instances import normalize_for_policy

TOL = 1e-9


@dataclass
class PolicyBatch:
    instances: list[Instance]  # originals, in caller units
    scales: torch.Tensor  # [B] distance scale back to caller units
    variant: VariantFlags
    m: int
    g: int
    customer_feats: torch.Tensor  # [B, n, 5]
    depot_feats: torch.Tensor  # [B, m, 2] (all g nodes in TSP mode)
    dist: torch.Tensor  # [B, g, g]
    demand: torch.Tensor  # [B, g]
    backhaul: torch.Tensor  # [B, g] bool
    early: torch.Tensor
    late: torch.Tensor
    service: torch.Tensor
    limit: torch.Tensor  # [B]
    horizon: torch.Tensor  # [B]

    @property
    def size(self) -> int:
        return len(self.instances)

    @classmethod
    def from_instances(cls, instances: Sequence[Instance], dtype=torch.float32) -> "PolicyBatch":
        if not instances:
            raise ValueError("empty batch")
        first = instances[0]
        for inst in instances:
            if inst.variant != first.variant or inst.g != first.g or inst.m != first.m:
                raise ValueError("a batch needs instances of one variant and size")
        v, m, g = first.variant, first.m, first.g
        scaled = [normalize_for_policy(inst) for inst in instances]

        def stack(fn):
            return torch.as_tensor(np.stack([fn(s) for s, _ in scaled]), dtype=dtype)

        tw = v.time_windows
        horizon = np.array([s.tw_late[0] if tw else math.inf for s, _ in scaled])

        def cust(s):
            c = s.coords[m:]
            dem = np.where(s.is_backhaul[m:], -s.demand[m:], s.demand[m:])
            if tw:
                early, late = s.tw_early[m:] / s.tw_late[0], s.tw_late[m:] / s.tw_late[0]
            else:
                early, late = np.zeros(len(c)), np.ones(len(c))
            return np.column_stack([c, dem, early, late])

        return cls(
            instances=list(instances),
            scales=torch.as_tensor([sc for _, sc in scaled], dtype=dtype),
            variant=v,
            m=m,
            g=g,
            customer_feats=stack(cust) if not v.tsp_mode else torch.zeros(len(instances), 0, 5, dtype=dtype),
            depot_feats=stack(lambda s: s.coords if v.tsp_mode else s.coords[:m]),
            dist=stack(lambda s: s.dist),
            demand=stack(lambda s: s.demand),
            backhaul=torch.as_tensor(np.stack([s.is_backhaul for s, _ in scaled])) & bool(v.backhaul),
            early=stack(lambda s: s.tw_early if tw else np.zeros(g)),
            late=stack(lambda s: s.tw_late if tw else np.full(g, math.inf)),
            service=stack(lambda s: s.service_time),
            limit=torch.as_tensor([s.route_limit if v.duration_limit else math.inf for s, _ in scaled], dtype=dtype),
            horizon=torch.as_tensor(horizon, dtype=dtype),
        )

    def to(self, dtype) -> "PolicyBatch":
        fields = {k: getattr(self, k) for k in self.__dataclass_fields__}
        for k, val in fields.items():
            if isinstance(val, torch.Tensor) and val.is_floating_point():
                fields[k] = val.to(dtype)
        return PolicyBatch(**fields)


def _gather(t: torch.Tensor, idx: torch.Tensor) -> torch.Tensor:
    """``t[b, idx[b, j]]`` for ``t`` of shape [B, g] and ``idx`` [B, N]."""
    return t.gather(1, idx)


class RouteEnv:
    """Lockstep state of ``B x N`` partial solutions."""

    def __init__(self, batch: PolicyBatch, n_traj: int):
        self.batch = batch
        B, g = batch.size, batch.g
        self.B, self.N, self.g = B, n_traj, g
        self.tsp = batch.variant.tsp_mode
        self.m = 1 if self.tsp else batch.m
        dtype = batch.dist.dtype
        shape = (B, n_traj)
        self.cur = torch.zeros(shape, dtype=torch.long)
        self.depot = torch.zeros(shape, dtype=torch.long)
        self.extending = torch.zeros(shape, dtype=torch.bool)
        self.count = torch.zeros(shape, dtype=torch.long)
        self.peak = torch.zeros(shape, dtype=dtype)
        self.last = torch.zeros(shape, dtype=dtype)
        self.clock = torch.zeros(shape, dtype=dtype)
        self.length = torch.zeros(shape, dtype=dtype)
        self.svc = torch.zeros(shape, dtype=dtype)
        self.total = torch.zeros(shape, dtype=dtype)
        self.visited = torch.zeros(B, n_traj, g, dtype=torch.bool)
        if not self.tsp:
            self.visited[:, :, : self.m] = True  # depots are never "visited"
        self.start = torch.zeros(shape, dtype=torch.long)
        self.done = torch.zeros(shape, dtype=torch.bool)
        self.is_customer = torch.zeros(g, dtype=torch.bool)
        self.is_customer[self.m:] = True
        if self.tsp:
            self.is_customer[:] = True
        self._b = torch.arange(B)[:, None].expand(shape)

    # -- helpers -------------------------------------------------------------

    def _row(self, t: torch.Tensor, nodes: torch.Tensor) -> torch.Tensor:
        """Rows ``t[b, nodes[b, j], :]`` of a [B, g, g] tensor."""
        return t[self._b, nodes]

    def _per_node(self, t: torch.Tensor) -> torch.Tensor:
        return t[:, None, :].expand(self.B, self.N, self.g)

    def dynamic_features(self) -> torch.Tensor:
        b = self.batch
        if b.variant.time_windows:
            clock = self.clock / b.horizon[:, None]
        else:
            clock = torch.zeros_like(self.clock)
        open_flag = torch.full_like(self.clock, float(b.variant.open_routes))
        return torch.stack([1.0 - self.peak, clock, self.length, open_flag], dim=-1)

    # -- masks ---------------------------------------------------------------

    def customer_mask(self, strict: bool = True) -> torch.Tensor:
        """Customers that can be appended to the active route."""
        b = self.batch
        v = b.variant
        ok = ~self.visited & self.is_customer
        if self.tsp:
            return ok
        dem = self._per_node(b.demand)
        bh = self._per_node(b.backhaul)
        line_ok = self.peak[..., None] + dem <= 1.0 + TOL
        back_ok = (self.last[..., None] + dem <= 1.0 + TOL) & (self.count[..., None] > 0)
        ok = ok & torch.where(bh, back_ok, line_ok)
        if not strict:
            return ok
        d_cur = self._row(b.dist, self.cur)
        d_home = self._row(b.dist, self.depot) if not v.open_routes else torch.zeros_like(d_cur)
        service = self._per_node(b.service)
        if v.duration_limit:
            dur = self.length[..., None] + self.svc[..., None] + d_cur + service + d_home
            ok = ok & (dur <= b.limit[:, None, None] + TOL)
        if v.time_windows:
            arrive = torch.maximum(self.clock[..., None] + d_cur, self._per_node(b.early))
            ok = ok & (arrive <= self._per_node(b.late) + TOL)
            if not v.open_routes:
                back = arrive + service + d_home
                ok = ok & (back <= b.horizon[:, None, None] + TOL)
        return ok

    def _startable_depots(self) -> torch.Tensor:
        """[B, N, m]: depots from which some unvisited customer can open a route."""
        b = self.batch
        v = b.variant
        m = self.m
        left = ~self.visited & self.is_customer  # [B, N, g]
        lines_left = (left & ~self._per_node(b.backhaul)).any(-1)
        cand = left & (~self._per_node(b.backhaul) | ~lines_left[..., None])
        d = b.dist[:, :m, :]  # [B, m, g]
        ok = torch.ones(b.size, m, self.g, dtype=torch.bool)
        if v.duration_limit:
            ret = d if not v.open_routes else torch.zeros_like(d)
            ok = ok & (d + b.service[:, None, :] + ret <= b.limit[:, None, None] + TOL)
        if v.time_windows:
            arrive = torch.maximum(d, b.early[:, None, :])
            ok = ok & (arrive <= b.late[:, None, :] + TOL)
            if not v.open_routes:
                ok = ok & (arrive + b.service[:, None, :] + d <= b.horizon[:, None, None] + TOL)
        return (cand[:, :, None, :] & ok[:, None, :, :]).any(-1)

    def mask(self) -> torch.Tensor:
        """Selectable nodes ``[B, N, g]``; finished rows may only repeat node 0."""
        B, N, g, m = self.B, self.N, self.g, self.m
        mask = torch.zeros(B, N, g, dtype=torch.bool)
        if self.tsp:
            mask = self.customer_mask()
        else:
            cust = self.customer_mask(strict=True)
            empty = self.count == 0
            # A fresh route with no feasible opener falls back to capacity-only rules.
            stuck = self.extending & empty & ~cust.any(-1)
            if stuck.any():
                relaxed = ~self.visited & self.is_customer
                cust = torch.where(stuck[..., None], relaxed, cust)
            ext = self.extending[..., None]
            mask = torch.where(ext, cust, mask)
            # Closing: only the active depot of a non-empty route.
            close_ok = self.extending & ~empty
            if self.batch.variant.backhaul:
                left = ~self.visited & self.is_customer
                lines_left = (left & ~self._per_node(self.batch.backhaul)).any(-1)
                bh_insertable = (cust & self._per_node(self.batch.backhaul)).any(-1)
                close_ok = close_ok & ~(~lines_left & bh_insertable)
            mask[self._b[close_ok], torch.arange(N)[None, :].expand(B, N)[close_ok], self.depot[close_ok]] = True
            # Selecting a depot.
            sel = ~self.extending & ~self.done
            startable = self._startable_depots()
            startable = torch.where(startable.any(-1, keepdim=True), startable, torch.ones_like(startable))
            mask[..., :m] = mask[..., :m] | (sel[..., None] & startable)
        done = self.done[..., None] & (torch.arange(g) == 0)
        return torch.where(self.done[..., None], done, mask)

    # -- transitions ---------------------------------------------------------

    def step(self, action: torch.Tensor) -> None:
        b = self.batch
        v = b.variant
        live = ~self.done
        d_move = self._row(b.dist, self.cur).gather(-1, action[..., None]).squeeze(-1)
        if self.tsp:
            first = live & (self.visited.sum(-1) == 0)
            self.start = torch.where(first, action, self.start)
            self.total = self.total + torch.where(live & ~first, d_move, torch.zeros_like(d_move))
            self.visited[self._b[live], torch.arange(self.N)[None].expand_as(action)[live], action[live]] = True
            self.cur = torch.where(live, action, self.cur)
            finished = live & self.visited.all(-1)
            if finished.any():
                d_back = self._row(b.dist, self.cur).gather(-1, self.start[..., None]).squeeze(-1)
                self.total = self.total + torch.where(finished, d_back, torch.zeros_like(d_back))
            self.done = self.done | finished
            return

        is_depot = action < self.m
        select = live & ~self.extending & is_depot
        close = live & self.extending & is_depot
        visit = live & self.extending & ~is_depot
        if (live & ~self.extending & ~is_depot).any():
            raise RuntimeError("customer chosen while no route is open")

        # Open a route.
        self.depot = torch.where(select, action, self.depot)
        zero = torch.zeros_like(self.peak)
        for name in ("peak", "last", "length", "svc"):
            setattr(self, name, torch.where(select, zero, getattr(self, name)))
        self.clock = torch.where(select, _gather(b.early, action), self.clock)
        self.count = torch.where(select, torch.zeros_like(self.count), self.count)

        # Close a route.
        if not v.open_routes:
            self.total = self.total + torch.where(close, d_move, zero)

        # Visit a customer.
        dem = _gather(b.demand, action)
        bh = _gather(b.backhaul, action)
        self.peak = torch.where(visit & ~bh, self.peak + dem, self.peak)
        self.last = torch.where(visit & bh, self.last + dem, self.last)
        self.peak = torch.where(visit & bh, torch.maximum(self.peak, self.last), self.peak)
        arrive = torch.maximum(self.clock + d_move, _gather(b.early, action))
        self.clock = torch.where(visit, arrive + _gather(b.service, action), self.clock)
        self.length = torch.where(visit, self.length + d_move, self.length)
        self.svc = torch.where(visit, self.svc + _gather(b.service, action), self.svc)
        self.total = self.total + torch.where(visit, d_move, zero)
        self.count = torch.where(visit, self.count + 1, self.count)
        rows, cols = self._b[visit], torch.arange(self.N)[None].expand_as(action)[visit]
        self.visited[rows, cols, action[visit]] = True

        self.extending = (self.extending | select) & ~close
        self.cur = torch.where(live, action, self.cur)
        all_seen = self.visited.all(-1)
        self.done = self.done | (close & all_seen)


def actions_to_solution(actions: Sequence[int], m: int, tsp: bool = False) -> Solution:
    """Decode one trajectory's action list (padding ``-1`` ignored)."""
    acts = [int(a) for a in actions if a >= 0]
    if tsp:
        if not acts:
            return Solution.from_lists([], [])
        k = acts.index(0)
        tour = acts[k:] + acts[:k]
        return Solution.from_lists([tour[1:]], [0])
    routes, depots = [], []
    current: list[int] | None = None
    depot = 0
    for a in acts:
        if a < m:
            if current is None:
                depot, current = a, []
            else:
                routes.append(current)
                depots.append(depot)
                current = None
        else:
            if current is None:
                raise ValueError("customer action outside a route")
            current.append(a)
    if current:
        routes.append(current)
        depots.append(depot)
    return Solution.from_lists(routes, depots)
