from __future__ import annotations

import json

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from conftest import DATA
from hybridvrp.core import InfeasibleInstanceError, Instance, check_feasibility, evaluate_solution, solution_cost
from hybridvrp.estimators import HybridVRPSolver
from hybridvrp.instances import GenConfig, generate_instance, instance_to_json, load_instance, read_solution
from hybridvrp.policy import CheckpointError, PolicyConfig, PolicyNet, save_checkpoint
from hybridvrp.search import LSConfig, make_random, run_local_search
from hybridvrp.solver import (
    BenchmarkReport,
    BenchmarkRow,
    SolveConfig,
    benchmark,
    compute_rpd,
    greedy_initial,
    load_references,
    neural_construct,
    solve,
)

VARIANTS = ["cvrp", "mdvrp", "vrpb", "vrpl", "ovrp", "vrptw"]
MICRO = PolicyConfig(hidden=8, edge_hidden=4, layers=1, heads=2)


@pytest.fixture(scope="module")
def checkpoint(tmp_path_factory):
    torch.manual_seed(0)
    path = tmp_path_factory.mktemp("ckpt") / "micro.pt"
    save_checkpoint(PolicyNet(MICRO).eval(), path, ["mdvrp"])
    return str(path)


# -- greedy construction ---------------------------------------------------------

def test_greedy_single_customer():
    inst = Instance([(0, 0), (3, 4)], [0, 5], 1, 50)
    sol = greedy_initial(inst)
    assert [r.customers for r in sol.routes] == [[1]] and solution_cost(sol, inst) == 10.0


def test_greedy_collinear_visits_in_distance_order():
    coords = [(0, 0), (3, 0), (1, 0), (4, 0), (2, 0)]
    inst = Instance(coords, [0, 1, 1, 1, 1], 1, 50)
    assert greedy_initial(inst).routes[0].customers == [2, 4, 1, 3]


def test_greedy_opens_new_route_when_full():
    coords = [(0, 0), (1, 0), (2, 0), (3, 0)]
    inst = Instance(coords, [0, 30, 30, 10], 1, 50)
    sol = greedy_initial(inst)
    assert check_feasibility(sol, inst).feasible and len(sol.routes) == 2


def test_greedy_rejects_oversized_demand():
    with pytest.raises(InfeasibleInstanceError):
        greedy_initial(Instance([(0, 0), (1, 0)], [0, 60], 1, 50))


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from(VARIANTS + ["tsp"]), st.integers(2, 30))
def test_greedy_is_capacity_feasible(seed, variant, n):
    inst = generate_instance(GenConfig(variant, n, seed=seed))
    sol = greedy_initial(inst)
    assert sorted(sol.customers()) == list(inst.customers)
    assert evaluate_solution(sol, inst).excess_load == 0.0


# -- RPD -------------------------------------------------------------------------

@pytest.mark.parametrize("z, best, expected", [(10, 10, 0.0), (11, 10, 10.0), (577, 577, 0.0),
                                               (28157, 27591, 2.051)])
def test_rpd_values(z, best, expected):
    assert abs(compute_rpd(z, best) - expected) <= 1e-3


def test_rpd_rejects_non_positive_reference():
    with pytest.raises(ValueError):
        compute_rpd(10, 0)


# -- solve -----------------------------------------------------------------------

def test_solve_config_validation():
    with pytest.raises(ValueError):
        SolveConfig(mode="beam")
    with pytest.raises(ValueError):
        solve(generate_instance(GenConfig("cvrp", 5, seed=0)), SolveConfig(mode="neural"))


def test_random_ls_zero_iterations_is_one_refinement():
    inst = generate_instance(GenConfig("cvrp", 20, seed=3))
    res = solve(inst, SolveConfig("random+ls", ls=LSConfig(iterations=0), seed=4))
    start = make_random(inst, np.random.default_rng(4))
    assert res.construction_cost == pytest.approx(solution_cost(start, inst))
    direct = run_local_search(start, inst, LSConfig(iterations=0, seed=4))
    assert res.cost == pytest.approx(min(direct.cost, res.construction_cost))
    assert res.iterations == 0


@pytest.mark.parametrize("variant", VARIANTS + ["tsp"])
@pytest.mark.parametrize("mode", ["greedy+ls", "random+ls"])
def test_solve_improves_and_is_feasible(variant, mode):
    inst = generate_instance(GenConfig(variant, 15, seed=2))
    res = solve(inst, SolveConfig(mode, ls=LSConfig(iterations=3), seed=1))
    assert res.cost <= res.construction_cost + 1e-9
    assert res.feasible and check_feasibility(res.solution, inst).feasible
    assert res.cost == pytest.approx(evaluate_solution(res.solution, inst).distance, abs=1e-9)


def test_solve_is_deterministic():
    inst = generate_instance(GenConfig("vrptw", 15, seed=0))
    a = solve(inst, SolveConfig("random+ls", ls=LSConfig(iterations=3), seed=5))
    b = solve(inst, SolveConfig("random+ls", ls=LSConfig(iterations=3), seed=5))
    assert a.solution == b.solution and a.cost == b.cost


def test_solve_reports_unservable_instances():
    inst = Instance([(0, 0), (1, 0)], [0, 60], 1, 50)
    with pytest.raises(InfeasibleInstanceError):
        solve(inst, SolveConfig("greedy+ls"))


@pytest.mark.parametrize("mode", ["neural", "neural+ls"])
def test_neural_modes(checkpoint, mode):
    inst = generate_instance(GenConfig("cvrp", 12, seed=1))
    res = solve(inst, SolveConfig(mode, checkpoint=checkpoint, ls=LSConfig(iterations=2)))
    assert check_feasibility(res.solution, inst).feasible
    assert res.cost <= res.construction_cost + 1e-9
    assert res.stats()["mode"] == mode


def test_augmented_construction_never_worse(checkpoint):
    from hybridvrp.policy import load_checkpoint

    model = load_checkpoint(checkpoint)
    for seed in range(5):
        inst = generate_instance(GenConfig("mdvrp", 12, seed=seed))
        on = solution_cost(neural_construct(inst, model, augment=True), inst)
        off = solution_cost(neural_construct(inst, model, augment=False), inst)
        assert on <= off + 1e-9


def test_neural_construct_on_large_coordinates(checkpoint):
    from hybridvrp.policy import load_checkpoint

    inst = load_instance(DATA / "p01")
    sol = neural_construct(inst, load_checkpoint(checkpoint), augment=True, max_starts=10)
    assert check_feasibility(sol, inst).feasible


def test_routing_checkpoint_rejects_tsp(checkpoint):
    inst = generate_instance(GenConfig("tsp", 8, seed=0))
    with pytest.raises(CheckpointError):
        solve(inst, SolveConfig("neural", checkpoint=checkpoint))


# -- benchmark ---------------------------------------------------------------------

def write_instances(directory, specs):
    directory.mkdir(exist_ok=True)
    for name, variant, n, seed in specs:
        (directory / f"{name}.json").write_text(instance_to_json(generate_instance(GenConfig(variant, n, seed=seed))))


def test_empty_directory_gives_undefined_mean(tmp_path):
    (tmp_path / "empty").mkdir()
    report = benchmark(tmp_path / "empty", {}, out_dir=tmp_path / "out")
    assert report.rows == [] and report.mean_rpd is None
    assert json.loads((tmp_path / "out" / "report.json").read_text())["mean_rpd_defined"] is False


def test_mean_rpd_from_rows():
    report = BenchmarkReport([BenchmarkRow("A", 103.0, 100.0, compute_rpd(103, 100), 110.0, 1.0, 5, True)])
    assert report.mean_rpd == pytest.approx(3.0)


def test_benchmark_end_to_end(tmp_path):
    write_instances(tmp_path / "set", [("a", "cvrp", 10, 0), ("b", "mdvrp", 10, 1)])
    (tmp_path / "set" / "broken.json").write_text("{not json")
    refs = tmp_path / "refs.txt"
    refs.write_text("name value\na 1.0\n")
    config = SolveConfig("greedy+ls", ls=LSConfig(iterations=2))
    report = benchmark(tmp_path / "set", refs, config, out_dir=tmp_path / "out", workers=1)
    names = {r.name: r for r in report.rows}
    assert set(names) == {"a", "b"} and [n for n, _ in report.skipped] == ["broken"]
    assert names["b"].rpd is None and names["a"].rpd == pytest.approx(compute_rpd(names["a"].objective, 1.0))
    assert report.mean_rpd == pytest.approx(names["a"].rpd)
    for name, row in names.items():
        inst = load_instance(tmp_path / "set" / f"{name}.json")
        sol = read_solution(tmp_path / "out" / f"{name}.sol", inst)
        assert evaluate_solution(sol, inst).distance == pytest.approx(row.objective, abs=1e-6)
    header = (tmp_path / "out" / "report.csv").read_text().splitlines()[0]
    assert header.startswith("name,objective,best_known,rpd")


def test_benchmark_with_worker_pool(tmp_path):
    write_instances(tmp_path / "set", [("a", "cvrp", 8, 0), ("b", "cvrp", 8, 1)])
    config = SolveConfig("greedy+ls", ls=LSConfig(iterations=1))
    serial = benchmark(tmp_path / "set", {}, config, workers=1)
    pooled = benchmark(tmp_path / "set", {}, config, workers=2)
    assert [(r.name, r.objective) for r in serial.rows] == [(r.name, r.objective) for r in pooled.rows]


def test_load_references_formats(tmp_path):
    (tmp_path / "r.json").write_text('{"p01": 576.87}')
    (tmp_path / "r.txt").write_text("# comment\np01 576.87\np02,473.53\n")
    assert load_references(tmp_path / "r.json") == {"p01": 576.87}
    assert load_references(tmp_path / "r.txt") == {"p01": 576.87, "p02": 473.53}
    (tmp_path / "bad.txt").write_text("p01 1\np02 x\n")
    with pytest.raises(ValueError):
        load_references(tmp_path / "bad.txt")


# -- estimator -------------------------------------------------------------------

def test_estimator_params_roundtrip():
    est = HybridVRPSolver(mode="random+ls", iterations=3, seed=2)
    params = est.get_params()
    assert params["mode"] == "random+ls" and params["iterations"] == 3
    other = clone(est).set_params(iterations=5)
    assert other.get_params()["iterations"] == 5 and est.iterations == 3


def test_estimator_fit_predict_score():
    insts = [generate_instance(GenConfig("cvrp", 10, seed=s)) for s in range(2)]
    est = HybridVRPSolver(iterations=2).fit(insts)
    sols = est.predict(insts)
    assert all(check_feasibility(s, i).feasible for s, i in zip(sols, insts))
    assert est.score(insts) == pytest.approx(-np.mean([r.cost for r in est.results_]))


def test_estimator_requires_fit_and_checkpoint():
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        HybridVRPSolver().predict([generate_instance(GenConfig("cvrp", 5, seed=0))])
    with pytest.raises(ValueError):
        HybridVRPSolver(mode="neural").fit()


def test_estimator_neural(checkpoint):
    inst = generate_instance(GenConfig("cvrp", 8, seed=0))
    est = HybridVRPSolver(mode="neural", checkpoint=checkpoint).fit()
    assert check_feasibility(est.predict(inst)[0], inst).feasible
