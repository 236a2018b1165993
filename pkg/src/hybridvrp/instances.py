"""Random instance generation, benchmark parsers and on-disk formats.

Byte-level layouts of every format handled here are documented in
``docs/formats.md``.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Instance, InstanceError, Route, Solution, VariantFlags, VRPError

INSTANCE_FORMAT = "hybridvrp-instance"
INSTANCE_FORMAT_VERSION = 1

# Default depot counts per problem size for multi-depot instances.
DEPOTS_BY_SIZE = {20: 2, 50: 3, 100: 4}


class ParseError(VRPError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class UnsupportedFormatError(ParseError):
    pass


@dataclass(frozen=True)
class TWParams:
    """Time-window generator settings in normalized units (unit square, unit speed)."""

    horizon: float = 4.6
    service_time: float = 0.2
    width_min: float = 0.15
    width_max: float = 0.18


@dataclass(frozen=True)
class GenConfig:
    variant: VariantFlags = field(default_factory=VariantFlags)
    n: int = 20
    m: int | None = None
    seed: int = 0
    capacity: float = 50.0
    backhaul_fraction: float = 0.20
    route_limit: float = 3.0
    tw_params: TWParams = field(default_factory=TWParams)

    def __post_init__(self):
        if isinstance(self.variant, str):
            object.__setattr__(self, "variant", VariantFlags.from_name(self.variant))
        if self.n < 1:
            raise InstanceError("n must be at least 1")
        if self.m is not None and self.m < 1:
            raise InstanceError("m must be at least 1")
        if not 0.0 <= self.backhaul_fraction <= 1.0:
            raise InstanceError("backhaul_fraction must lie in [0, 1]")

    @property
    def depots(self) -> int:
        if not self.variant.multi_depot:
            return 1
        if self.m is not None:
            return self.m
        return DEPOTS_BY_SIZE.get(self.n, max(2, min(4, self.n // 25 + 1)))


def generate_instance(config: GenConfig, rng: np.random.Generator | None = None) -> Instance:
    """Sample an instance; for ``tsp_mode`` the size ``n`` counts all nodes."""
    v = config.variant
    rng = np.random.default_rng(config.seed) if rng is None else rng
    if v.tsp_mode:
        if config.n < 2:
            raise InstanceError("a TSP needs at least two nodes")
        coords = rng.random((config.n, 2))
        return Instance(coords, np.zeros(config.n), 1, math.inf, v, name=f"tsp{config.n}-s{config.seed}")

    m = config.depots
    g = m + config.n
    coords = rng.random((g, 2))
    demand = np.zeros(g)
    demand[m:] = rng.integers(1, 10, size=config.n)
    backhaul = np.zeros(g, dtype=bool)
    if v.backhaul:
        k = int(math.floor(config.backhaul_fraction * config.n))
        backhaul[m + rng.choice(config.n, size=k, replace=False)] = True
    inst = Instance(
        coords,
        demand,
        m,
        config.capacity,
        v,
        is_backhaul=backhaul,
        route_limit=config.route_limit if v.duration_limit else math.inf,
        name=f"{v.name}{config.n}-s{config.seed}",
    )
    if v.time_windows:
        early, late, service = generate_time_windows(inst, config.tw_params, rng)
        inst.tw_early, inst.tw_late, inst.service_time = early, late, service
        inst.validate()
    return inst


def generate_time_windows(instance: Instance, params: TWParams = TWParams(), rng=None):
    """Per-node ``(tw_early, tw_late, service_time)``; every window is reachable from every depot.

    Window centres are uniform between the latest possible arrival from a depot
    and the last start that still allows a return before the horizon; widths are
    uniform in ``[width_min, width_max]``.
    """
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    g, m = instance.g, instance.m
    s, horizon = params.service_time, params.horizon
    reach = instance.dist[:m, :].max(axis=0)
    lo = reach
    hi = np.maximum(horizon - reach - s, lo)
    centre = lo + (hi - lo) * rng.random(g)
    width = rng.uniform(params.width_min, params.width_max, size=g)
    early = np.maximum(0.0, centre - width / 2)
    late = np.maximum(np.minimum(centre + width / 2, hi), early + 1e-9)
    service = np.full(g, s)
    early[:m], late[:m], service[:m] = 0.0, horizon, 0.0
    return early, late, service


# ---------------------------------------------------------------------------
# Benchmark parsers


def _numbers(line: str, lineno: int) -> list[float]:
    try:
        return [float(tok) for tok in line.split()]
    except ValueError as exc:
        raise ParseError(f"expected numbers, got {line.strip()!r}", lineno) from exc


def parse_cordeau(text: str, name: str = "") -> Instance:
    """Parse a Cordeau-format multi-depot instance (problem type 2)."""
    rows = [(i + 1, line) for i, line in enumerate(text.splitlines()) if line.strip()]
    if not rows:
        raise ParseError("empty file", 1)
    lineno, header = rows[0]
    head = _numbers(header, lineno)
    if len(head) < 4:
        raise ParseError("header must read: type vehicles customers depots", lineno)
    ptype, vehicles, n, t = (int(x) for x in head[:4])
    if ptype != 2:
        raise UnsupportedFormatError(f"problem type {ptype} is not an MDVRP file", lineno)
    if len(rows) < 1 + t + n + t:
        raise ParseError(f"expected {1 + 2 * t + n} non-empty lines, found {len(rows)}", rows[-1][0])

    limits = []
    for lineno, line in rows[1 : 1 + t]:
        vals = _numbers(line, lineno)
        if len(vals) < 2:
            raise ParseError("depot constraint line must read: duration capacity", lineno)
        limits.append(vals[:2])
    cust_rows = rows[1 + t : 1 + t + n]
    depot_rows = rows[1 + t + n : 1 + t + n + t]

    g = t + n
    coords = np.zeros((g, 2))
    demand = np.zeros(g)
    service = np.zeros(g)
    for k, (lineno, line) in enumerate(depot_rows):
        vals = _numbers(line, lineno)
        if len(vals) < 3:
            raise ParseError("depot row must read: id x y ...", lineno)
        coords[k] = vals[1:3]
    for k, (lineno, line) in enumerate(cust_rows):
        vals = _numbers(line, lineno)
        if len(vals) < 5:
            raise ParseError("customer row must read: id x y service demand ...", lineno)
        coords[t + k] = vals[1:3]
        service[t + k] = vals[3]
        demand[t + k] = vals[4]

    duration, capacity = limits[0]
    return Instance(
        coords,
        demand,
        t,
        capacity,
        VariantFlags(multi_depot=True, duration_limit=duration > 0),
        service_time=service,
        route_limit=duration if duration > 0 else math.inf,
        name=name,
        meta={"vehicles_per_depot": vehicles, "source": "cordeau"},
    )


_SECTION_RE = re.compile(r"^([A-Z_]+)\s*(?::\s*(.*))?$")


def parse_tsplib_like(text: str, name: str = "", rounded: bool | None = None) -> Instance:
    """Parse a TSPLIB/CVRPLIB keyword file (``EUC_2D`` only).

    ``rounded`` defaults to the TSPLIB nearest-integer convention for EUC_2D.
    """
    header: dict[str, str] = {}
    coords: dict[int, tuple[float, float]] = {}
    demands: dict[int, float] = {}
    depots: list[int] = []
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line == "EOF":
            break
        match = _SECTION_RE.match(line)
        if match and not line[0].isdigit() and not line.startswith("-"):
            key, value = match.group(1), match.group(2)
            if key.endswith("_SECTION"):
                section = key
            else:
                header[key] = (value or "").strip()
                section = None
            continue
        vals = _numbers(line, lineno)
        if section == "NODE_COORD_SECTION":
            if len(vals) < 3:
                raise ParseError("coordinate row must read: id x y", lineno)
            coords[int(vals[0])] = (vals[1], vals[2])
        elif section == "DEMAND_SECTION":
            if len(vals) < 2:
                raise ParseError("demand row must read: id demand", lineno)
            demands[int(vals[0])] = vals[1]
        elif section == "DEPOT_SECTION":
            depots.extend(int(x) for x in vals if x >= 0)
        else:
            raise ParseError(f"data outside of a known section: {line!r}", lineno)

    kind = header.get("TYPE", "").split()[0].upper() if header.get("TYPE") else ""
    if kind not in ("TSP", "CVRP"):
        raise UnsupportedFormatError(f"unsupported TYPE {header.get('TYPE')!r}")
    ewt = header.get("EDGE_WEIGHT_TYPE", "").upper()
    if ewt != "EUC_2D":
        raise UnsupportedFormatError(f"unsupported EDGE_WEIGHT_TYPE {ewt or None!r}")
    dim = int(header.get("DIMENSION", len(coords)))
    ids = sorted(coords)
    if len(ids) != dim:
        raise ParseError(f"DIMENSION is {dim} but {len(ids)} coordinates were given")
    rounded = True if rounded is None else rounded
    name = name or header.get("NAME", "")

    if kind == "TSP":
        pts = np.array([coords[i] for i in ids])
        return Instance(pts, np.zeros(dim), 1, math.inf, VariantFlags(tsp_mode=True), rounded=rounded, name=name)

    if not depots:
        depots = [ids[0]]
    if len(depots) != 1:
        raise UnsupportedFormatError("only single-depot CVRP files are supported")
    depot = depots[0]
    order = [depot] + [i for i in ids if i != depot]
    pts = np.array([coords[i] for i in order])
    dem = np.array([demands.get(i, 0.0) for i in order])
    dem[0] = 0.0
    limit = float(header["DISTANCE"]) if "DISTANCE" in header else math.inf
    service = float(header.get("SERVICE_TIME", 0.0))
    svc = np.full(dim, service)
    svc[0] = 0.0
    return Instance(
        pts,
        dem,
        1,
        float(header["CAPACITY"]),
        VariantFlags(duration_limit=math.isfinite(limit)),
        service_time=svc,
        route_limit=limit,
        rounded=rounded,
        name=name,
        meta={"source": "tsplib", "node_ids": order},
    )


def parse_solomon(text: str, name: str = "") -> Instance:
    """Parse a Solomon VRPTW file; the depot row supplies the scheduling horizon."""
    lines = text.splitlines()
    capacity = None
    rows = []
    expect_fleet = False
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        upper = line.upper()
        if upper.startswith("NUMBER") and "CAPACITY" in upper:
            expect_fleet = True
            continue
        if not line[0].isdigit():
            if not name and lineno == 1:
                name = line
            continue
        vals = _numbers(line, lineno)
        if expect_fleet:
            if len(vals) != 2:
                raise ParseError("fleet line must read: vehicles capacity", lineno)
            vehicles, capacity = int(vals[0]), vals[1]
            expect_fleet = False
            continue
        if len(vals) != 7:
            raise ParseError("customer row must read: id x y demand ready due service", lineno)
        rows.append(vals)
    if capacity is None:
        raise ParseError("missing VEHICLE NUMBER/CAPACITY block")
    if not rows:
        raise ParseError("no customer rows")
    data = np.array(rows)
    return Instance(
        data[:, 1:3],
        data[:, 3],
        1,
        capacity,
        VariantFlags(time_windows=True),
        tw_early=data[:, 4],
        tw_late=data[:, 5],
        service_time=data[:, 6],
        name=name,
        meta={"vehicles": vehicles, "source": "solomon"},
    )


def load_instance(path) -> Instance:
    """Read an instance file, guessing the format from its content."""
    path = Path(path)
    text = path.read_text()
    stripped = text.lstrip()
    if stripped.startswith("{"):
        return instance_from_json(text)
    if re.search(r"^\s*NODE_COORD_SECTION", text, re.MULTILINE):
        return parse_tsplib_like(text, name=path.stem)
    if re.search(r"^\s*CUSTOMER\s*$", text, re.MULTILINE | re.IGNORECASE):
        return parse_solomon(text, name=path.stem)
    return parse_cordeau(text, name=path.stem)


# ---------------------------------------------------------------------------
# Internal JSON


def _floats(arr) -> list:
    return [None if not math.isfinite(x) else float(x) for x in np.asarray(arr, dtype=float).ravel()]


def _unfloats(values) -> np.ndarray:
    return np.array([math.inf if v is None else v for v in values], dtype=float)


def instance_to_json(instance: Instance) -> str:
    v = instance.variant
    doc = {
        "format": INSTANCE_FORMAT,
        "version": INSTANCE_FORMAT_VERSION,
        "name": instance.name,
        "variant": {k: getattr(v, k) for k in VariantFlags.__dataclass_fields__},
        "m": instance.m,
        "capacity": None if not math.isfinite(instance.capacity) else instance.capacity,
        "route_limit": None if not math.isfinite(instance.route_limit) else instance.route_limit,
        "rounded": instance.rounded,
        "coords": np.asarray(instance.coords).tolist(),
        "demand": _floats(instance.demand),
        "is_backhaul": [bool(b) for b in instance.is_backhaul],
        "tw_early": _floats(instance.tw_early),
        "tw_late": _floats(instance.tw_late),
        "service_time": _floats(instance.service_time),
        "meta": instance.meta,
    }
    return json.dumps(doc, indent=1, sort_keys=True)


def instance_from_json(text: str) -> Instance:
    doc = json.loads(text)
    if doc.get("format") != INSTANCE_FORMAT:
        raise ParseError("not an instance document")
    if doc.get("version") != INSTANCE_FORMAT_VERSION:
        raise ParseError(f"unsupported instance format version {doc.get('version')}")
    return Instance(
        np.array(doc["coords"], dtype=float),
        _unfloats(doc["demand"]),
        doc["m"],
        math.inf if doc["capacity"] is None else doc["capacity"],
        VariantFlags(**doc["variant"]),
        is_backhaul=np.array(doc["is_backhaul"], dtype=bool),
        tw_early=_unfloats(doc["tw_early"]),
        tw_late=_unfloats(doc["tw_late"]),
        service_time=_unfloats(doc["service_time"]),
        route_limit=math.inf if doc["route_limit"] is None else doc["route_limit"],
        rounded=doc["rounded"],
        name=doc["name"],
        meta=doc.get("meta", {}),
    )


def save_instance(instance: Instance, path) -> None:
    Path(path).write_text(instance_to_json(instance) + "\n")


# ---------------------------------------------------------------------------
# Scaling for the policy


def normalize_for_policy(instance: Instance) -> tuple[Instance, float]:
    """Map an instance into the unit square with capacity 1.

    Returns ``(scaled, scale)`` where costs in the scaled space times ``scale``
    give costs in original units.  Instances already inside the unit square keep
    their coordinates (``scale == 1``).  Time quantities are divided by the same
    spatial scale so that travel time keeps equalling distance.
    """
    coords = instance.coords
    lo = coords.min(axis=0)
    extent = float((coords.max(axis=0) - lo).max())
    if (coords.min() >= 0 and coords.max() <= 1) or extent == 0:
        scale, shift = 1.0, np.zeros(2)
    else:
        scale, shift = extent, lo
    cap = instance.capacity if math.isfinite(instance.capacity) and instance.capacity > 0 else 1.0
    scaled = Instance(
        (coords - shift) / scale,
        instance.demand / cap,
        instance.m,
        instance.capacity / cap if math.isfinite(instance.capacity) else math.inf,
        instance.variant,
        is_backhaul=instance.is_backhaul.copy(),
        tw_early=instance.tw_early / scale,
        tw_late=instance.tw_late / scale,
        service_time=instance.service_time / scale,
        route_limit=instance.route_limit / scale,
        dist=instance.dist / scale,
        rounded=False,
        name=instance.name,
        meta=dict(instance.meta),
    )
    return scaled, scale


# ---------------------------------------------------------------------------
# Solution files

_ROUTE_RE = re.compile(r"^Route #(\d+) \(depot (\d+)\):(.*)$")


def format_solution(solution: Solution, cost: float) -> str:
    lines = []
    k = 0
    for route in solution.routes:
        if not route.customers:
            continue
        k += 1
        lines.append(f"Route #{k} (depot {route.depot}): " + " ".join(map(str, route.customers)))
    lines.append(f"Cost {cost:.6f}")
    return "\n".join(lines) + "\n"


def write_solution(solution: Solution, cost: float, path) -> None:
    Path(path).write_text(format_solution(solution, cost))


def parse_solution(text: str, instance: Instance | None = None) -> tuple[Solution, float | None]:
    routes = []
    cost = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("Cost"):
            try:
                cost = float(line.split()[1])
            except (IndexError, ValueError) as exc:
                raise ParseError("bad cost line", lineno) from exc
            continue
        match = _ROUTE_RE.match(line)
        if not match:
            raise ParseError(f"unrecognized line {line!r}", lineno)
        depot = int(match.group(2))
        customers = [int(x) for x in match.group(3).split()]
        if instance is not None:
            if not 0 <= depot < instance.m:
                raise ParseError(f"depot index {depot} out of range", lineno)
            bad = [c for c in customers if not instance.m <= c < instance.g]
            if bad:
                raise ParseError(f"customer index {bad[0]} out of range", lineno)
        routes.append(Route(depot, customers))
    return Solution(routes), cost


def read_solution(path, instance: Instance | None = None) -> Solution:
    return parse_solution(Path(path).read_text(), instance)[0]
