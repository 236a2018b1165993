"""Problem model shared by the policy, the local search and the harness.

Node indexing convention: the ``m`` depots occupy indices ``0..m-1`` and the
``n`` customers follow at ``m..g-1``.  Demands are kept in raw load units; the
policy works on a normalized copy (see :func:`hybridvrp.instances.normalize_for_policy`).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np


class VRPError(Exception):
    """Base class for errors raised by this package."""


class StructuralError(VRPError, ValueError):
    """A solution does not visit every customer exactly once, or uses bad indices."""


class InfeasibleInstanceError(VRPError):
    """No feasible solution exists, e.g. a customer whose demand exceeds the capacity."""


class InstanceError(VRPError, ValueError):
    """Invalid instance data."""


@dataclass(frozen=True)
class VariantFlags:
    multi_depot: bool = False
    backhaul: bool = False
    duration_limit: bool = False
    open_routes: bool = False
    time_windows: bool = False
    tsp_mode: bool = False

    def __post_init__(self):
        if self.tsp_mode and any(
            (self.multi_depot, self.backhaul, self.duration_limit, self.open_routes, self.time_windows)
        ):
            raise InstanceError("tsp_mode cannot be combined with other variant flags")

    @classmethod
    def from_name(cls, name: str) -> "VariantFlags":
        """Parse names such as ``cvrp``, ``mdvrp``, ``ovrp``, ``vrpbtw`` or ``mdovrpbltw``."""
        key = name.lower().replace("-", "").replace("_", "")
        if key == "tsp":
            return cls(tsp_mode=True)
        if key == "cvrp":
            return cls()
        match = _VARIANT_RE.fullmatch(key)
        if match is None:
            raise InstanceError(f"unknown variant {name!r}")
        md, op, bh, dl, tw = match.groups()
        return cls(
            multi_depot=bool(md),
            open_routes=bool(op),
            backhaul=bool(bh),
            duration_limit=bool(dl),
            time_windows=bool(tw),
        )

    @property
    def name(self) -> str:
        if self.tsp_mode:
            return "tsp"
        head = ("md" if self.multi_depot else "") + ("o" if self.open_routes else "")
        tail = ("b" if self.backhaul else "") + ("l" if self.duration_limit else "")
        tail += "tw" if self.time_windows else ""
        return f"{head}vrp{tail}" if head or tail else "cvrp"


_VARIANT_RE = re.compile(r"(md)?(o)?vrp(b)?(l)?(tw)?")

# The seven variants used throughout the experiments.
MAIN_VARIANTS = ("mdvrp", "cvrp", "vrpb", "vrpl", "ovrp", "vrptw", "tsp")


@dataclass(frozen=True)
class Node:
    id: int
    kind: str
    x: float
    y: float
    demand: float = 0.0
    is_backhaul: bool = False
    tw_early: float = 0.0
    tw_late: float = math.inf
    service_time: float = 0.0


def build_distance_matrix(coords, rounded: bool = False) -> np.ndarray:
    """Euclidean distance matrix; ``rounded`` applies the CVRPLIB nearest-integer convention."""
    pts = np.asarray(coords, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) == 0:
        raise InstanceError("expected a non-empty sequence of (x, y) pairs")
    if not np.all(np.isfinite(pts)):
        raise InstanceError("coordinates must be finite")
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=-1))
    if rounded:
        dist = np.floor(dist + 0.5)
    np.fill_diagonal(dist, 0.0)
    return dist


@dataclass(eq=False)
class Instance:
    coords: np.ndarray
    demand: np.ndarray
    m: int
    capacity: float
    variant: VariantFlags = field(default_factory=VariantFlags)
    is_backhaul: np.ndarray | None = None
    tw_early: np.ndarray | None = None
    tw_late: np.ndarray | None = None
    service_time: np.ndarray | None = None
    route_limit: float = math.inf
    dist: np.ndarray | None = None
    rounded: bool = False
    name: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64).reshape(-1, 2)
        g = len(self.coords)
        self.demand = np.asarray(self.demand, dtype=np.float64).reshape(g)
        if self.is_backhaul is None:
            self.is_backhaul = np.zeros(g, dtype=bool)
        self.is_backhaul = np.asarray(self.is_backhaul, dtype=bool).reshape(g)
        if self.tw_early is None:
            self.tw_early = np.zeros(g)
        if self.tw_late is None:
            self.tw_late = np.full(g, math.inf)
        if self.service_time is None:
            self.service_time = np.zeros(g)
        self.tw_early = np.asarray(self.tw_early, dtype=np.float64).reshape(g)
        self.tw_late = np.asarray(self.tw_late, dtype=np.float64).reshape(g)
        self.service_time = np.asarray(self.service_time, dtype=np.float64).reshape(g)
        if self.dist is None:
            self.dist = build_distance_matrix(self.coords, rounded=self.rounded)
        self.dist = np.asarray(self.dist, dtype=np.float64)
        self.m = int(self.m)
        self.capacity = float(self.capacity)
        self.route_limit = float(self.route_limit)
        self.validate()

    @property
    def g(self) -> int:
        return len(self.coords)

    @property
    def n(self) -> int:
        return self.g - self.m

    @property
    def customers(self) -> range:
        return range(self.m, self.g)

    @property
    def depots(self) -> range:
        return range(self.m)

    def node(self, i: int) -> Node:
        kind = "depot" if i < self.m else "customer"
        return Node(
            id=i,
            kind=kind,
            x=float(self.coords[i, 0]),
            y=float(self.coords[i, 1]),
            demand=float(self.demand[i]),
            is_backhaul=bool(self.is_backhaul[i]),
            tw_early=float(self.tw_early[i]),
            tw_late=float(self.tw_late[i]),
            service_time=float(self.service_time[i]),
        )

    @property
    def nodes(self) -> list[Node]:
        return [self.node(i) for i in range(self.g)]

    def validate(self) -> None:
        g = self.g
        if self.m < 1 or self.m >= g:
            raise InstanceError(f"need at least one depot and one customer (m={self.m}, g={g})")
        if self.m > 1 and not self.variant.multi_depot:
            raise InstanceError("m > 1 requires the multi_depot flag")
        if self.dist.shape != (g, g):
            raise InstanceError("distance matrix shape does not match node count")
        if not np.allclose(self.dist, self.dist.T, rtol=0, atol=1e-9):
            raise InstanceError("distance matrix must be symmetric")
        if np.any(self.dist < 0) or np.any(np.diag(self.dist) != 0):
            raise InstanceError("distances must be non-negative with a zero diagonal")
        if np.any(self.demand[: self.m] != 0) or np.any(self.is_backhaul[: self.m]):
            raise InstanceError("depots carry no demand and are never backhauls")
        if np.any(self.demand < 0):
            raise InstanceError("demands must be non-negative")
        if self.variant.time_windows and np.any(self.tw_early > self.tw_late):
            raise InstanceError("time windows must satisfy early <= late")

    @property
    def horizon(self) -> float:
        return float(self.tw_late[0])

    def with_coords(self, coords) -> "Instance":
        """Copy with new coordinates; distances are recomputed."""
        return replace(self, coords=np.asarray(coords, dtype=np.float64), dist=None, meta=dict(self.meta))

    def same_as(self, other: "Instance") -> bool:
        """Field-wise equality (arrays compared exactly)."""
        if not isinstance(other, Instance):
            return False
        arrays = ("coords", "demand", "is_backhaul", "tw_early", "tw_late", "service_time", "dist")
        return (
            self.m == other.m
            and self.capacity == other.capacity
            and self.variant == other.variant
            and self.route_limit == other.route_limit
            and self.rounded == other.rounded
            and self.name == other.name
            and all(np.array_equal(getattr(self, a), getattr(other, a)) for a in arrays)
        )


@dataclass
class Route:
    depot: int
    customers: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.customers)


@dataclass
class Solution:
    routes: list[Route] = field(default_factory=list)

    @classmethod
    def from_lists(cls, routes: Iterable[Sequence[int]], depots: Sequence[int] | None = None) -> "Solution":
        routes = [list(map(int, r)) for r in routes]
        depots = list(depots) if depots is not None else [0] * len(routes)
        return cls([Route(int(d), r) for d, r in zip(depots, routes)])

    def copy(self) -> "Solution":
        return Solution([Route(r.depot, list(r.customers)) for r in self.routes])

    def normalized(self) -> "Solution":
        """Copy with empty routes dropped."""
        return Solution([Route(r.depot, list(r.customers)) for r in self.routes if r.customers])

    def customers(self) -> list[int]:
        return [c for r in self.routes for c in r.customers]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Solution):
            return NotImplemented
        mine = [(r.depot, tuple(r.customers)) for r in self.routes if r.customers]
        theirs = [(r.depot, tuple(r.customers)) for r in other.routes if r.customers]
        return mine == theirs


@dataclass(frozen=True)
class PenaltyWeights:
    w_capacity: float = 0.1
    w_time_window: float = 0.1
    w_duration: float = 0.1

    def __post_init__(self):
        if min(self.w_capacity, self.w_time_window, self.w_duration) < 0:
            raise ValueError("penalty weights must be non-negative")

    def as_array(self) -> np.ndarray:
        return np.array([self.w_capacity, self.w_time_window, self.w_duration], dtype=np.float64)


SEARCH_PENALTIES = PenaltyWeights(0.1, 0.1, 0.1)
FIX_PENALTIES = PenaltyWeights(1e4, 1e4, 1e4)
ZERO_PENALTIES = PenaltyWeights(0.0, 0.0, 0.0)

# Violations below this magnitude are floating-point noise, not infeasibility.
FEASIBILITY_TOL = 1e-9


@dataclass(frozen=True)
class CostBreakdown:
    distance: float
    excess_load: float = 0.0
    tw_violation: float = 0.0
    duration_excess: float = 0.0
    # Routes whose first customer is a backhaul (only counted for backhaul variants).
    backhaul_start: float = 0.0
    penalized: float = 0.0

    @property
    def violations(self) -> tuple[float, float, float, float]:
        return (self.excess_load, self.tw_violation, self.duration_excess, self.backhaul_start)

    @property
    def is_feasible(self) -> bool:
        return all(v <= FEASIBILITY_TOL for v in self.violations)


@dataclass
class RouteReport:
    depot: int
    customers: list[int]
    load_profile: list[float]
    schedule: list[float]
    length: float
    duration: float
    excess_load: float
    tw_violation: float
    duration_excess: float
    backhaul_start: bool

    @property
    def feasible(self) -> bool:
        return (
            max(self.excess_load, self.tw_violation, self.duration_excess) <= FEASIBILITY_TOL
            and not self.backhaul_start
        )


@dataclass
class FeasibilityReport:
    feasible: bool
    routes: list[RouteReport]
    structural_errors: list[str] = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.feasible


def structural_errors(solution: Solution, instance: Instance) -> list[str]:
    errors = []
    seen: dict[int, int] = {}
    for k, route in enumerate(solution.routes):
        if not 0 <= route.depot < instance.m:
            errors.append(f"route {k}: depot index {route.depot} out of range")
        for c in route.customers:
            if not instance.m <= c < instance.g:
                errors.append(f"route {k}: {c} is not a customer index")
            elif c in seen:
                errors.append(f"customer {c} visited twice (routes {seen[c]} and {k})")
            else:
                seen[c] = k
    missing = [c for c in instance.customers if c not in seen]
    if missing:
        errors.append(f"customers never visited: {missing[:10]}{'...' if len(missing) > 10 else ''}")
    if instance.variant.tsp_mode and len([r for r in solution.routes if r.customers]) > 1:
        errors.append("a TSP solution is a single tour")
    return errors


def route_distance(route: Route, instance: Instance) -> float:
    if not route.customers:
        return 0.0
    d = instance.dist
    path = [route.depot, *route.customers]
    if not instance.variant.open_routes:
        path.append(route.depot)
    return float(sum(d[a, b] for a, b in zip(path[:-1], path[1:])))


def route_report(route: Route, instance: Instance) -> RouteReport:
    v = instance.variant
    d = instance.dist
    cust = route.customers
    length = route_distance(route, instance)

    if v.backhaul:
        load = sum(instance.demand[c] for c in cust if not instance.is_backhaul[c])
    else:
        load = sum(instance.demand[c] for c in cust)
    profile = [float(load)]
    for c in cust:
        if v.backhaul and instance.is_backhaul[c]:
            load += instance.demand[c]
        else:
            load -= instance.demand[c]
        profile.append(float(load))
    peak = max(profile)
    excess = max(0.0, peak - instance.capacity)

    schedule = []
    tw = 0.0
    if v.time_windows and cust:
        t = instance.tw_early[route.depot]
        prev = route.depot
        for c in cust:
            t = max(t + d[prev, c], instance.tw_early[c])
            schedule.append(float(t))
            tw += max(0.0, t - instance.tw_late[c])
            t += instance.service_time[c]
            prev = c
        if not v.open_routes:
            t += d[prev, route.depot]
            schedule.append(float(t))
            tw += max(0.0, t - instance.tw_late[route.depot])

    duration = length + float(sum(instance.service_time[c] for c in cust))
    dur_excess = max(0.0, duration - instance.route_limit) if v.duration_limit else 0.0
    bh_start = bool(v.backhaul and cust and instance.is_backhaul[cust[0]])
    return RouteReport(
        depot=route.depot,
        customers=list(cust),
        load_profile=profile,
        schedule=schedule,
        length=length,
        duration=duration,
        excess_load=float(excess),
        tw_violation=float(tw),
        duration_excess=float(dur_excess),
        backhaul_start=bh_start,
    )


def evaluate_solution(
    solution: Solution, instance: Instance, penalties: PenaltyWeights = SEARCH_PENALTIES
) -> CostBreakdown:
    errors = structural_errors(solution, instance)
    if errors:
        raise StructuralError("; ".join(errors))
    dist = load = tw = dur = bh = 0.0
    for route in solution.routes:
        if not route.customers:
            continue
        rep = route_report(route, instance)
        dist += rep.length
        load += rep.excess_load
        tw += rep.tw_violation
        dur += rep.duration_excess
        bh += float(rep.backhaul_start)
    penalized = (
        dist
        + penalties.w_capacity * (load + bh)
        + penalties.w_time_window * tw
        + penalties.w_duration * dur
    )
    return CostBreakdown(dist, load, tw, dur, bh, penalized)


def check_feasibility(solution: Solution, instance: Instance) -> FeasibilityReport:
    errors = structural_errors(solution, instance)
    reports = [route_report(r, instance) for r in solution.routes if r.customers] if not any(
        "out of range" in e or "not a customer" in e for e in errors
    ) else []
    feasible = not errors and all(r.feasible for r in reports)
    return FeasibilityReport(feasible, reports, errors)


def solution_cost(solution: Solution, instance: Instance) -> float:
    """Total distance of a structurally valid solution."""
    return evaluate_solution(solution, instance, ZERO_PENALTIES).distance
