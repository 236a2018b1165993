"""Neural construction and granular local search for vehicle routing variants."""

from .core import (
    FIX_PENALTIES,
    MAIN_VARIANTS,
    SEARCH_PENALTIES,
    ZERO_PENALTIES,
    CostBreakdown,
    FeasibilityReport,
    InfeasibleInstanceError,
    Instance,
    InstanceError,
    PenaltyWeights,
    Route,
    Solution,
    StructuralError,
    VariantFlags,
    VRPError,
    check_feasibility,
    evaluate_solution,
    solution_cost,
)
from .instances import GenConfig, generate_instance, load_instance, read_solution, write_solution
from .search import LSConfig, run_local_search
from .solver import SolveConfig, SolveResult, benchmark, compute_rpd, greedy_initial, solve

__all__ = [
    "FIX_PENALTIES",
    "MAIN_VARIANTS",
    "SEARCH_PENALTIES",
    "ZERO_PENALTIES",
    "CostBreakdown",
    "FeasibilityReport",
    "InfeasibleInstanceError",
    "Instance",
    "InstanceError",
    "PenaltyWeights",
    "Route",
    "Solution",
    "StructuralError",
    "VariantFlags",
    "VRPError",
    "check_feasibility",
    "evaluate_solution",
    "solution_cost",
    "GenConfig",
    "generate_instance",
    "load_instance",
    "read_solution",
    "write_solution",
    "LSConfig",
    "run_local_search",
    "SolveConfig",
    "SolveResult",
    "benchmark",
    "compute_rpd",
    "greedy_initial",
    "solve",
]
