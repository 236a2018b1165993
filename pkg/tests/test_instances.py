from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import DATA
from hybridvrp.core import InstanceError, Solution, check_feasibility, evaluate_solution
from hybridvrp.instances import (
    GenConfig,
    ParseError,
    TWParams,
    UnsupportedFormatError,
    format_solution,
    generate_instance,
    instance_from_json,
    instance_to_json,
    load_instance,
    normalize_for_policy,
    parse_cordeau,
    parse_solomon,
    parse_solution,
    parse_tsplib_like,
    read_solution,
    write_solution,
)

TSP3 = """NAME : tiny
TYPE : TSP
DIMENSION : 3
EDGE_WEIGHT_TYPE : EUC_2D
NODE_COORD_SECTION
1 0 0
2 3 4
3 6 0
EOF
"""

CVRP5 = """NAME : small
TYPE : CVRP
DIMENSION : 4
EDGE_WEIGHT_TYPE : EUC_2D
CAPACITY : 10
NODE_COORD_SECTION
1 5 5
2 0 0
3 10 0
4 10 10
DEMAND_SECTION
1 3
2 0
3 4
4 5
DEPOT_SECTION
2
-1
EOF
"""

SOLOMON = """TINY1

VEHICLE
NUMBER     CAPACITY
  25         200

CUSTOMER
CUST NO.  XCOORD.   YCOORD.    DEMAND   READY TIME  DUE DATE   SERVICE   TIME

    0      40         50          0          0       1236          0
    1      45         68         10        912        967         90
    2      45         70         30        825        870         90
"""


def test_generation_is_deterministic():
    a = generate_instance(GenConfig("cvrp", 20, seed=7))
    b = generate_instance(GenConfig("cvrp", 20, seed=7))
    assert a.same_as(b)


def test_vrpb_has_twenty_percent_backhauls():
    inst = generate_instance(GenConfig("vrpb", 20, seed=3))
    assert int(inst.is_backhaul.sum()) == 4
    assert not inst.is_backhaul[: inst.m].any()


def test_generation_defaults():
    inst = generate_instance(GenConfig("vrpl", 20, seed=1))
    assert inst.capacity == 50 and inst.route_limit == 3
    assert inst.coords.min() >= 0 and inst.coords.max() <= 1
    md = generate_instance(GenConfig("mdvrp", 20, seed=1))
    assert md.m == 2 and md.n == 20


def test_tsp_size_counts_all_nodes():
    inst = generate_instance(GenConfig("tsp", 20, seed=1))
    assert inst.g == 20 and inst.variant.tsp_mode


def test_rejects_empty_instances():
    with pytest.raises(InstanceError):
        GenConfig("cvrp", 0)


def test_demand_frequencies_are_uniform():
    counts = np.zeros(10)
    seed = 0
    while counts.sum() < 10_000:
        inst = generate_instance(GenConfig("cvrp", 100, seed=seed))
        for d in inst.demand[inst.m:]:
            counts[int(d)] += 1
        seed += 1
    total = counts.sum()
    p = 1 / 9
    sigma = math.sqrt(total * p * (1 - p))
    assert counts[0] == 0
    assert np.all(np.abs(counts[1:] - total * p) <= 3 * sigma)


def test_time_windows_reachable_and_positive():
    params = TWParams()
    for seed in range(1000):
        inst = generate_instance(GenConfig("vrptw", 20, seed=seed))
        early, late = inst.tw_early[1:], inst.tw_late[1:]
        assert np.all(late > early)
        assert np.all(late >= inst.dist[0, 1:])
        assert np.all(late <= params.horizon) and inst.tw_late[0] == params.horizon
        # each customer alone is a feasible route
        for c in range(1, 21, 7):
            assert check_feasibility(Solution.from_lists([[c]], [0]), inst).routes[0].tw_violation == 0.0


def test_service_time_is_constant():
    inst = generate_instance(GenConfig("vrptw", 20, seed=2))
    assert len(set(inst.service_time[1:])) == 1


def test_parse_p01_fixture():
    inst = load_instance(DATA / "p01")
    assert (inst.m, inst.n) == (4, 50)
    assert inst.capacity == 80 and inst.variant.multi_depot and not inst.variant.duration_limit
    assert tuple(inst.coords[0]) == (20.0, 20.0)


def test_cordeau_errors_carry_line_numbers():
    with pytest.raises(ParseError) as err:
        parse_cordeau("2 1 2 1\n0 80\n1 x 3 0 5\n2 4 4 0 5\n3 1 1\n")
    assert err.value.line == 3


def test_cordeau_duration_flag():
    text = "2 1 1 1\n200 80\n1 10 10 0 5\n2 0 0\n"
    inst = parse_cordeau(text)
    assert inst.variant.duration_limit and inst.route_limit == 200


def test_tsp_file():
    inst = parse_tsplib_like(TSP3)
    assert inst.variant.tsp_mode and inst.g == 3
    assert inst.coords.tolist() == [[0, 0], [3, 4], [6, 0]]
    assert inst.dist[0, 1] == 5.0


def test_cvrp_file_moves_depot_first():
    inst = parse_tsplib_like(CVRP5)
    assert inst.m == 1 and inst.n == 3 and inst.capacity == 10
    assert inst.coords[0].tolist() == [0, 0]
    assert inst.demand.tolist() == [0, 3, 4, 5]
    assert inst.rounded


def test_unsupported_edge_weight_type():
    with pytest.raises(UnsupportedFormatError):
        parse_tsplib_like(TSP3.replace("EUC_2D", "GEO"))


def test_solomon():
    inst = parse_solomon(SOLOMON)
    assert inst.variant.time_windows and inst.n == 2 and inst.capacity == 200
    assert inst.tw_late[0] == 1236 and inst.service_time[1] == 90
    sol = Solution.from_lists([[2], [1]], [0, 0])
    assert check_feasibility(sol, inst).feasible


def test_solomon_bad_row():
    with pytest.raises(ParseError) as err:
        parse_solomon(SOLOMON.replace("912        967", "912"))
    assert err.value.line is not None


@pytest.mark.parametrize("variant", ["cvrp", "mdvrp", "vrpb", "vrpl", "ovrp", "vrptw", "tsp"])
def test_json_roundtrip(variant):
    inst = generate_instance(GenConfig(variant, 12, seed=4))
    again = instance_from_json(instance_to_json(inst))
    assert again.same_as(inst)
    assert instance_to_json(again) == instance_to_json(inst)


def test_parsed_roundtrip_through_json():
    for inst in (load_instance(DATA / "p01"), parse_solomon(SOLOMON, "tiny"), parse_tsplib_like(CVRP5)):
        assert instance_from_json(instance_to_json(inst)).same_as(inst)


def test_normalize_identity_for_unit_square():
    inst = generate_instance(GenConfig("cvrp", 10, seed=0))
    scaled, scale = normalize_for_policy(inst)
    assert scale == 1.0 and np.array_equal(scaled.coords, inst.coords)
    assert np.allclose(scaled.demand, inst.demand / 50)


def test_normalize_large_coordinates():
    inst = load_instance(DATA / "p01")
    scaled, scale = normalize_for_policy(inst)
    assert scaled.coords.max() == pytest.approx(1.0) and scaled.coords.min() >= 0
    sol = Solution.from_lists([[c] for c in inst.customers], [0] * inst.n)
    a = evaluate_solution(sol, inst).distance
    b = evaluate_solution(sol, scaled).distance * scale
    assert abs(a - b) <= 1e-9 * a


def test_normalize_degenerate():
    inst = generate_instance(GenConfig("cvrp", 3, seed=0)).with_coords(np.full((4, 2), 5.0))
    scaled, scale = normalize_for_policy(inst)
    assert scale == 1.0


def test_solution_file_roundtrip(tmp_path):
    inst = generate_instance(GenConfig("mdvrp", 6, seed=0))
    sol = Solution.from_lists([[2, 3, 4], [5, 6, 7]], [0, 1])
    cost = evaluate_solution(sol, inst).distance
    write_solution(sol, cost, tmp_path / "s.sol")
    assert read_solution(tmp_path / "s.sol", inst) == sol
    parsed_sol, parsed_cost = parse_solution(format_solution(sol, cost))
    assert round(parsed_cost, 3) == round(cost, 3)


def test_solution_out_of_range(tmp_path):
    inst = generate_instance(GenConfig("cvrp", 4, seed=0))
    (tmp_path / "bad.sol").write_text(f"Route #1 (depot 0): 1 2 {inst.g + 5}\nCost 1\n")
    with pytest.raises(ParseError):
        read_solution(tmp_path / "bad.sol", inst)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32), st.sampled_from(["cvrp", "mdvrp", "vrpb", "vrptw", "ovrp"]), st.integers(1, 30))
def test_generator_is_pure(seed, variant, n):
    a = generate_instance(GenConfig(variant, n, seed=seed))
    b = generate_instance(GenConfig(variant, n, seed=seed))
    assert instance_to_json(a) == instance_to_json(b)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_parse_write_parse_idempotent(seed):
    inst = generate_instance(GenConfig("vrptw", 8, seed=seed))
    once = instance_to_json(instance_from_json(instance_to_json(inst)))
    assert instance_to_json(instance_from_json(once)) == once
