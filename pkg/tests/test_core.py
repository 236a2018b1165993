from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridvrp.core import (
    FIX_PENALTIES,
    SEARCH_PENALTIES,
    ZERO_PENALTIES,
    Instance,
    InstanceError,
    PenaltyWeights,
    Route,
    Solution,
    StructuralError,
    VariantFlags,
    build_distance_matrix,
    check_feasibility,
    evaluate_solution,
    route_distance,
    route_report,
)
from hybridvrp.instances import GenConfig, generate_instance

from oracles import distance_matrix, penalized_cost, route_terms, solution_routes

VARIANTS = ["cvrp", "mdvrp", "vrpb", "vrpl", "ovrp", "vrptw", "mdovrpbltw"]


def random_solution(inst, rng):
    custs = rng.permutation(np.arange(inst.m, inst.g)).tolist()
    cuts = sorted(rng.choice(np.arange(1, len(custs)), size=min(3, len(custs) - 1), replace=False).tolist())
    parts = np.split(np.array(custs), cuts)
    return Solution.from_lists([p.tolist() for p in parts], [int(rng.integers(inst.m)) for _ in parts])


def test_distance_345():
    d = build_distance_matrix([(0, 0), (3, 4)])
    assert d[0, 1] == 5.0 and d[1, 0] == 5.0


def test_distance_single_node():
    d = build_distance_matrix([(0.5, 0.5)])
    assert d.shape == (1, 1) and d[0, 0] == 0.0


def test_distance_matches_double_loop():
    pts = np.random.default_rng(3).random((50, 2))
    assert np.max(np.abs(build_distance_matrix(pts) - distance_matrix(pts))) <= 1e-12


def test_distance_rejects_non_finite():
    with pytest.raises(InstanceError):
        build_distance_matrix([(0, 0), (math.nan, 1)])


def test_rounded_distances_are_integers():
    d = build_distance_matrix([(0, 0), (1, 1), (3, 3)], rounded=True)
    assert d[0, 1] == 1.0 and d[0, 2] == 4.0


def test_variant_names_roundtrip():
    for name in ["cvrp", "mdvrp", "vrpb", "vrpl", "ovrp", "vrptw", "tsp", "mdovrpbltw"]:
        assert VariantFlags.from_name(name).name == name


def test_tsp_flag_is_exclusive():
    with pytest.raises(InstanceError):
        VariantFlags(tsp_mode=True, backhaul=True)


def test_unknown_variant_rejected():
    with pytest.raises(InstanceError):
        VariantFlags.from_name("vrpxyz")


def one_customer(open_routes=False):
    return Instance([(0, 0), (0.3, 0.4)], [0, 1], 1, 10, VariantFlags(open_routes=open_routes))


def test_route_distance_closed_and_open():
    assert route_distance(Route(0, [1]), one_customer()) == pytest.approx(1.0, abs=1e-15)
    assert route_distance(Route(0, [1]), one_customer(True)) == pytest.approx(0.5, abs=1e-15)


def test_route_distance_matches_accumulation():
    inst = generate_instance(GenConfig("cvrp", 6, seed=1))
    route = Route(0, [3, 1, 6, 2, 5, 4])
    path = [0, 3, 1, 6, 2, 5, 4, 0]
    expected = sum(inst.dist[a, b] for a, b in zip(path, path[1:]))
    assert abs(route_distance(route, inst) - expected) <= 1e-12


def test_tsp_tour_is_cyclic():
    inst = Instance([(0, 0), (1, 0), (1, 1), (0, 1)], np.zeros(4), 1, math.inf, VariantFlags(tsp_mode=True))
    sol = Solution.from_lists([[1, 2, 3]], [0])
    assert evaluate_solution(sol, inst).distance == pytest.approx(4.0)
    assert check_feasibility(sol, inst).feasible


def test_feasible_solution_penalized_equals_distance():
    inst = generate_instance(GenConfig("cvrp", 5, seed=2))
    sol = Solution.from_lists([[c] for c in inst.customers], [0] * 5)
    cb = evaluate_solution(sol, inst, FIX_PENALTIES)
    assert cb.is_feasible and cb.penalized == cb.distance


def test_capacity_excess_penalty_is_exact():
    coords = [(0, 0), (1, 0), (0, 1)]
    inst = Instance(coords, [0, 30, 25], 1, 50)
    sol = Solution.from_lists([[1, 2]], [0])
    cb = evaluate_solution(sol, inst, PenaltyWeights(0.1, 0.1, 0.1))
    assert cb.excess_load == 5.0
    assert cb.penalized == pytest.approx(cb.distance + 0.5, abs=1e-12)


def test_backhaul_load_profile():
    coords = [(0, 0), (1, 0), (2, 0), (3, 0)]
    inst = Instance(coords, [0, 4, 6, 5], 1, 10, VariantFlags(backhaul=True), is_backhaul=[False, False, True, False])
    rep = route_report(Route(0, [1, 2, 3]), inst)
    # departs with 4 + 5 on board, drops 4, picks up 6, drops 5
    assert rep.load_profile == [9.0, 5.0, 11.0, 6.0]
    assert rep.excess_load == 1.0


def test_backhaul_first_is_infeasible():
    coords = [(0, 0), (1, 0), (2, 0)]
    inst = Instance(coords, [0, 4, 6], 1, 50, VariantFlags(backhaul=True), is_backhaul=[False, True, False])
    assert not check_feasibility(Solution.from_lists([[1, 2]], [0]), inst).feasible
    assert check_feasibility(Solution.from_lists([[2, 1]], [0]), inst).feasible


def test_time_window_waiting_is_free_and_lateness_counts():
    coords = [(0, 0), (1, 0), (2, 0)]
    v = VariantFlags(time_windows=True)
    inst = Instance(coords, [0, 1, 1], 1, 10, v, tw_early=[0, 5, 0], tw_late=[100, 6, 5.5], service_time=[0, 1, 1])
    rep = route_report(Route(0, [1, 2]), inst)
    # arrive at 1 and wait until 5, leave at 6, reach node 2 at 7 (1.5 late)
    assert rep.schedule[:2] == [5.0, 7.0]
    assert rep.tw_violation == pytest.approx(1.5)


def test_duration_counts_service_time():
    coords = [(0, 0), (1, 0)]
    inst = Instance(coords, [0, 1], 1, 10, VariantFlags(duration_limit=True), service_time=[0, 0.5], route_limit=2.0)
    assert route_report(Route(0, [1]), inst).duration_excess == pytest.approx(0.5)


def test_structural_errors():
    inst = generate_instance(GenConfig("cvrp", 4, seed=0))
    with pytest.raises(StructuralError):
        evaluate_solution(Solution.from_lists([[1, 2, 3]], [0]), inst)
    with pytest.raises(StructuralError):
        evaluate_solution(Solution.from_lists([[1, 2, 3, 4, 1]], [0]), inst)
    rep = check_feasibility(Solution.from_lists([[1, 2, 3, 4, 9]], [0]), inst)
    assert not rep.feasible and rep.structural_errors


def test_empty_routes_dropped_on_normalization():
    sol = Solution.from_lists([[1], [], [2]], [0, 0, 0])
    assert len(sol.normalized().routes) == 2


@pytest.mark.parametrize("variant", VARIANTS)
def test_penalized_matches_oracle(variant):
    rng = np.random.default_rng(11)
    w = (0.3, 0.7, 1.3)
    for seed in range(100 // len(VARIANTS) + 1):
        inst = generate_instance(GenConfig(variant, 12, seed=seed))
        sol = random_solution(inst, rng)
        got = evaluate_solution(sol, inst, PenaltyWeights(*w)).penalized
        assert abs(got - penalized_cost(solution_routes(sol), inst, *w)) <= 1e-9


@pytest.mark.parametrize("variant", VARIANTS)
def test_verdict_agrees_with_breakdown(variant):
    rng = np.random.default_rng(5)
    for seed in range(1000 // len(VARIANTS)):
        inst = generate_instance(GenConfig(variant, 8, seed=seed))
        sol = random_solution(inst, rng)
        cb = evaluate_solution(sol, inst, SEARCH_PENALTIES)
        terms = [route_terms(d, c, inst) for d, c in solution_routes(sol)]
        oracle_ok = all(max(t[1:]) <= 1e-9 for t in terms)
        assert check_feasibility(sol, inst).feasible == cb.is_feasible == oracle_ok


# -- properties ---------------------------------------------------------------

instance_seeds = st.integers(0, 10_000)


@settings(max_examples=60, deadline=None)
@given(instance_seeds, st.sampled_from(VARIANTS), st.integers(2, 12))
def test_zero_weights_give_distance(seed, variant, n):
    inst = generate_instance(GenConfig(variant, n, seed=seed))
    sol = random_solution(inst, np.random.default_rng(seed))
    cb = evaluate_solution(sol, inst, ZERO_PENALTIES)
    assert cb.penalized == cb.distance


@settings(max_examples=60, deadline=None)
@given(instance_seeds, st.sampled_from(VARIANTS), st.integers(2, 12),
       st.tuples(*(st.floats(0, 1e4) for _ in range(3))))
def test_feasible_means_penalized_equals_distance(seed, variant, n, w):
    inst = generate_instance(GenConfig(variant, n, seed=seed))
    sol = random_solution(inst, np.random.default_rng(seed))
    if check_feasibility(sol, inst).feasible:
        cb = evaluate_solution(sol, inst, PenaltyWeights(*w))
        assert cb.penalized == cb.distance


@settings(max_examples=40, deadline=None)
@given(instance_seeds, st.floats(0.1, 1000.0))
def test_distance_scales_linearly(seed, s):
    inst = generate_instance(GenConfig("cvrp", 8, seed=seed))
    scaled = inst.with_coords(inst.coords * s)
    sols = [random_solution(inst, np.random.default_rng(seed + k)) for k in range(4)]
    base = [evaluate_solution(x, inst, ZERO_PENALTIES).distance for x in sols]
    big = [evaluate_solution(x, scaled, ZERO_PENALTIES).distance for x in sols]
    for a, b in zip(base, big):
        assert b == pytest.approx(a * s, rel=1e-12)
    assert int(np.argmin(base)) == int(np.argmin(big))


@settings(max_examples=60, deadline=None)
@given(instance_seeds, st.integers(2, 10))
def test_dropping_last_customer_never_lengthens(seed, n):
    inst = generate_instance(GenConfig("cvrp", n, seed=seed))
    route = np.random.default_rng(seed).permutation(np.arange(1, n + 1)).tolist()
    assert route_distance(Route(0, route[:-1]), inst) <= route_distance(Route(0, route), inst) + 1e-12


@settings(max_examples=40, deadline=None)
@given(instance_seeds, st.integers(1, 30))
def test_distance_matrix_invariants(seed, g):
    pts = np.random.default_rng(seed).random((g, 2)) * 100
    d = build_distance_matrix(pts)
    assert np.array_equal(d, d.T) and np.all(d >= 0) and np.all(np.diag(d) == 0)
