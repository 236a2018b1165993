"""End-to-end solving: constructions, the solve pipeline, RPD and benchmarks."""

from __future__ import annotations

import csv
import json
import math
import os
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import (
    Instance,
    InfeasibleInstanceError,
    Solution,
    VRPError,
    check_feasibility,
    solution_cost,
)
from .search import _kernels as K
from .search.engine import LSConfig, assert_serviceable, make_random, run_local_search
from .search.state import kernel_data

SOLVE_MODES = ("neural", "neural+ls", "greedy+ls", "random+ls")


def greedy_initial(instance: Instance) -> Solution:
    """Nearest-neighbour construction.

    Each route takes the nearest unvisited customer that can be appended
    without violating any constraint.  A new route starts at the depot/customer
    pair with the shortest distance among feasible single-customer routes.
    """
    custs = list(instance.customers)
    d = instance.dist
    if instance.variant.tsp_mode:
        tour, cur, left = [], 0, set(custs)
        while left:
            cur = min(left, key=lambda c: (d[cur, c], c))
            tour.append(cur)
            left.remove(cur)
        return Solution.from_lists([tour], [0])
    for c in custs:
        if instance.demand[c] > instance.capacity:
            raise InfeasibleInstanceError(f"customer {c} demand exceeds capacity")
    data = kernel_data(instance)
    buf = np.zeros(instance.n + 1, dtype=np.int64)

    def feasible(route: list[int], depot: int) -> bool:
        buf[: len(route)] = route
        return bool(K.seq_feasible(*data, buf, len(route), depot))

    left = set(custs)
    routes, depots = [], []
    while left:
        starts = sorted((d[dep, c], dep, c) for dep in instance.depots for c in left)
        pick = next(((dep, c) for _, dep, c in starts if feasible([c], dep)), None)
        if pick is None:
            # Nothing can open a feasible route; accept the nearest pair and leave it to repair.
            _, dep, c = starts[0]
        else:
            dep, c = pick
        route = [c]
        left.remove(c)
        while left:
            cur = route[-1]
            nxt = None
            for dc, cand in sorted((d[cur, cand], cand) for cand in left):
                if feasible(route + [cand], dep):
                    nxt = cand
                    break
            if nxt is None:
                break
            route.append(nxt)
            left.remove(nxt)
        routes.append(route)
        depots.append(dep)
    return Solution.from_lists(routes, depots)


def compute_rpd(objective: float, reference: float) -> float:
    """Relative percentage deviation of ``objective`` from ``reference``."""
    if not reference > 0:
        raise ValueError(f"reference must be positive, got {reference}")
    return 100.0 * (objective - reference) / reference


# ---------------------------------------------------------------------------
# The solve pipeline

THREADS_ENV = "HYBRIDVRP_THREADS"


@dataclass
class SolveConfig:
    mode: str = "greedy+ls"
    checkpoint: str | None = None
    augment: bool = True
    max_starts: int = 200
    ls: LSConfig = field(default_factory=LSConfig)
    time_budget: float | None = None  # seconds for the search phase
    seed: int = 0

    def __post_init__(self):
        if self.mode not in SOLVE_MODES:
            raise ValueError(f"mode must be one of {', '.join(SOLVE_MODES)}")
        if self.max_starts < 1:
            raise ValueError("max_starts must be positive")
        if self.time_budget is not None and self.time_budget < 0:
            raise ValueError("time_budget must be non-negative")

    @property
    def neural(self) -> bool:
        return self.mode.startswith("neural")

    @property
    def with_search(self) -> bool:
        return self.mode.endswith("+ls")

    def ls_config(self) -> LSConfig:
        budget = self.time_budget if self.time_budget is not None else self.ls.time_budget
        return replace(self.ls, seed=self.seed, time_budget=budget)


@dataclass
class SolveResult:
    solution: Solution
    cost: float
    construction_cost: float
    construction_seconds: float
    search_seconds: float
    trace: list = field(default_factory=list)
    iterations: int = 0
    mode: str = ""
    feasible: bool = True

    @property
    def total_seconds(self) -> float:
        return self.construction_seconds + self.search_seconds

    def stats(self) -> dict:
        return {
            "mode": self.mode,
            "cost": self.cost,
            "construction_cost": self.construction_cost,
            "construction_seconds": self.construction_seconds,
            "search_seconds": self.search_seconds,
            "iterations": self.iterations,
            "feasible": self.feasible,
        }


def neural_construct(instance: Instance, model, augment: bool = True, max_starts: int = 200) -> Solution:
    """Best greedy multi-start trajectory over the (optionally augmented) images."""
    import torch

    from .instances import normalize_for_policy
    from .policy import PolicyBatch, augment_x8, default_starts, rollout
    from .policy.checkpoint import CheckpointError

    if model.config.tsp != instance.variant.tsp_mode:
        kind = "TSP" if model.config.tsp else "routing"
        raise CheckpointError(f"a {kind} checkpoint cannot decode a {instance.variant.name} instance")
    if instance.g < 2:
        raise InfeasibleInstanceError("nothing to route")
    scaled, _ = normalize_for_policy(instance)
    images = augment_x8(scaled) if augment else [scaled]
    dtype = next(model.parameters()).dtype
    model.eval()
    # The identity image is decoded alone, exactly as without augmentation, and images
    # are compared by their exact cost, so augmenting can never do worse.
    groups = [images[:1], images[1:]] if len(images) > 1 else [images]
    best, best_cost = None, math.inf
    with torch.no_grad():
        for group in groups:
            batch = PolicyBatch.from_instances(group, dtype=dtype)
            res = rollout(model, batch, default_starts(batch.g, max_starts), "greedy")
            for b in range(len(group)):
                _, sol = res.best(b)
                cost = solution_cost(sol, instance)
                if cost < best_cost:
                    best, best_cost = sol, cost
    return best


def solve(instance: Instance, config: SolveConfig | None = None, model=None) -> SolveResult:
    config = config or SolveConfig()
    t0 = time.perf_counter()
    # Hard infeasibility (an unservable customer) is reported before any work is done.
    assert_serviceable(instance)
    if config.neural:
        if model is None:
            if not config.checkpoint:
                raise ValueError(f"mode {config.mode} needs a checkpoint")
            from .policy import load_checkpoint

            model = load_checkpoint(config.checkpoint)
        initial = neural_construct(instance, model, config.augment, config.max_starts)
    elif config.mode == "greedy+ls":
        initial = greedy_initial(instance)
    else:
        initial = make_random(instance, np.random.default_rng(config.seed))
    t1 = time.perf_counter()
    construction = solution_cost(initial, instance)
    result = SolveResult(initial, construction, construction, t1 - t0, 0.0, [], 0, config.mode)
    if config.with_search:
        ls = run_local_search(initial, instance, config.ls_config())
        result.solution, result.cost = ls.solution, solution_cost(ls.solution, instance)
        result.trace, result.iterations = ls.trace, ls.iterations
        result.search_seconds = time.perf_counter() - t1
    result.feasible = bool(check_feasibility(result.solution, instance))
    return result


# ---------------------------------------------------------------------------
# Benchmarks


@dataclass
class BenchmarkRow:
    name: str
    objective: float
    best_known: float | None
    rpd: float | None
    construction_cost: float
    wall_clock_s: float
    iterations: int
    feasible: bool


@dataclass
class BenchmarkReport:
    rows: list[BenchmarkRow] = field(default_factory=list)
    skipped: list[tuple[str, str]] = field(default_factory=list)
    total_seconds: float = 0.0

    @property
    def mean_rpd(self) -> float | None:
        """Mean RPD over instances with a reference; ``None`` when undefined."""
        values = [r.rpd for r in self.rows if r.rpd is not None]
        return float(np.mean(values)) if values else None

    def to_dict(self) -> dict:
        return {
            "instances": [asdict(r) for r in self.rows],
            "skipped": [{"name": n, "reason": why} for n, why in self.skipped],
            "mean_rpd": self.mean_rpd,
            "mean_rpd_defined": self.mean_rpd is not None,
            "total_seconds": self.total_seconds,
        }

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "report.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["name", "objective", "best_known", "rpd", "construction_cost", "wall_clock_s", "iterations",
                        "feasible"])
            for r in self.rows:
                w.writerow([r.name, f"{r.objective:.6f}", "" if r.best_known is None else r.best_known,
                            "" if r.rpd is None else f"{r.rpd:.6f}", f"{r.construction_cost:.6f}",
                            f"{r.wall_clock_s:.3f}", r.iterations, int(r.feasible)])
        (out / "report.json").write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def load_references(path) -> dict[str, float]:
    """Best-known objectives from a JSON object or ``name value`` / ``name,value`` lines."""
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        return {str(k): float(v) for k, v in json.loads(text).items()}
    refs = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected 'name value'")
        try:
            refs[parts[0]] = float(parts[1])
        except ValueError:
            if lineno == 1:
                continue  # header row
            raise ValueError(f"{path}:{lineno}: bad value {parts[1]!r}") from None
    return refs


def _bench_one(path: str, config: SolveConfig, out_dir: str | None):
    from .instances import load_instance, write_solution

    name = Path(path).stem
    try:
        instance = load_instance(path)
    except (VRPError, ValueError, OSError, UnicodeDecodeError) as exc:
        return name, None, f"{type(exc).__name__}: {exc}"
    t0 = time.perf_counter()
    try:
        res = solve(instance, config)
    except VRPError as exc:
        return name, None, f"{type(exc).__name__}: {exc}"
    secs = time.perf_counter() - t0
    if out_dir is not None:
        write_solution(res.solution, res.cost, Path(out_dir) / f"{name}.sol")
    feasible = bool(check_feasibility(res.solution, instance))
    return name, (res.cost, res.construction_cost, secs, res.iterations, feasible), None


def benchmark_files(directory, exclude=()) -> list[Path]:
    """Candidate instance files: everything except hidden files, reports and solutions."""
    root = Path(directory)
    if not root.is_dir():
        raise FileNotFoundError(f"{directory} is not a directory")
    skip_suffixes = {".sol", ".csv", ".md"}
    skip = {Path(p).resolve() for p in exclude}
    return sorted(
        p for p in root.iterdir()
        if p.is_file() and not p.name.startswith(".") and p.suffix.lower() not in skip_suffixes
        and p.name != "report.json" and p.resolve() not in skip
    )


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def benchmark(directory, references: dict[str, float] | str | os.PathLike | None, config: SolveConfig | None = None,
              out_dir=None, workers: int | None = None) -> BenchmarkReport:
    """Solve every instance file in ``directory`` and score it against ``references``."""
    config = config or SolveConfig()
    refs = load_references(references) if isinstance(references, (str, os.PathLike)) else dict(references or {})
    files = benchmark_files(directory, [references] if isinstance(references, (str, os.PathLike)) else ())
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    workers = workers or default_workers()
    t0 = time.perf_counter()
    args = [(str(p), config, None if out_dir is None else str(out_dir)) for p in files]
    if workers > 1 and len(args) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_bench_one, *zip(*args)))
    else:
        outcomes = [_bench_one(*a) for a in args]
    report = BenchmarkReport()
    for name, values, error in outcomes:
        if values is None:
            report.skipped.append((name, error))
            continue
        cost, construction, secs, iters, feasible = values
        ref = refs.get(name)
        rpd = compute_rpd(cost, ref) if ref is not None else None
        report.rows.append(BenchmarkRow(name, cost, ref, rpd, construction, secs, iters, feasible))
    report.total_seconds = time.perf_counter() - t0
    if out_dir is not None:
        report.write(out_dir)
    return report
