from __future__ import annotations

import csv
import math

import numpy as np
import pytest
import torch

from hybridvrp.core import check_feasibility
from hybridvrp.instances import GenConfig, generate_instance
from hybridvrp.policy import CheckpointError, NumericError, PolicyBatch, PolicyConfig, PolicyNet, rollout
from hybridvrp.trainer import (
    TrainConfig,
    adapt_for_tsp,
    finetune,
    make_optimizer,
    reinforce_step,
    shared_baseline,
    surrogate_loss,
    train,
    training_instances,
    write_curve,
)

MICRO = PolicyConfig(hidden=8, edge_hidden=4, layers=1, heads=2)
TINY = dict(steps=2, batch_size=4, n=5, eval_size=4, eval_batch=4, policy=MICRO)


def params(model):
    return {k: v.detach().clone() for k, v in model.state_dict().items()}


def same_params(a, b):
    return a.keys() == b.keys() and all(torch.equal(a[k], b[k]) for k in a)


# -- baseline and loss ---------------------------------------------------------

def test_baseline_of_equal_rewards():
    assert torch.equal(shared_baseline(torch.full((3, 4), -2.5)), torch.full((3,), -2.5))


def test_baseline_single_trajectory():
    r = torch.tensor([[1.0], [-3.0]])
    assert torch.equal(shared_baseline(r), r[:, 0])


def test_baseline_matches_scalar_accumulation():
    r = torch.as_tensor(np.random.default_rng(0).normal(size=(4, 5)), dtype=torch.float64)
    for i in range(4):
        acc = 0.0
        for j in range(5):
            acc += r[i, j].item()
        assert abs(shared_baseline(r)[i].item() - acc / 5) <= 1e-12


def test_baseline_rejects_empty_rows():
    with pytest.raises(ValueError):
        shared_baseline(torch.zeros(2, 0))


def test_equal_rewards_contribute_no_gradient():
    torch.manual_seed(0)
    batch = PolicyBatch.from_instances([generate_instance(GenConfig("cvrp", 6, seed=s)) for s in range(2)],
                                       torch.float64)
    model = PolicyNet(MICRO).double()
    res = rollout(model, batch, n_traj=3, mode="sample", generator=torch.Generator().manual_seed(0))
    rewards = torch.tensor([[-1.0, -1.0, -1.0], [-2.0, -2.0, -2.0]], dtype=torch.float64)
    surrogate_loss(res.log_prob, rewards).backward()
    assert all(p.grad is None or not p.grad.any() for p in model.parameters())


def test_zero_learning_rate_leaves_parameters():
    config = TrainConfig(lr=0.0, optimizer="ascent", **TINY)
    torch.manual_seed(0)
    model = PolicyNet(MICRO)
    before = {k: v.detach().clone() for k, v in model.named_parameters()}
    reinforce_step(model, make_optimizer(model, config), training_instances(config, 1, 0), config)
    assert all(torch.equal(before[k], v) for k, v in model.named_parameters())


def test_non_finite_gradient_aborts_step():
    config = TrainConfig(**TINY)
    torch.manual_seed(0)
    model = PolicyNet(MICRO)
    model.W_O.weight.register_hook(lambda g: g * float("inf"))
    before = params(model)
    with pytest.raises(NumericError, match="W_O"):
        reinforce_step(model, make_optimizer(model, config), training_instances(config, 1, 0), config)
    assert all(torch.equal(before[k], v) for k, v in model.named_parameters() for _ in [0] if k in before)


def test_surrogate_gradient_matches_finite_differences():
    torch.manual_seed(1)
    model = PolicyNet(MICRO).double().train()
    insts = [generate_instance(GenConfig("cvrp", 4, seed=s)) for s in range(2)]  # g = 5
    batch = PolicyBatch.from_instances(insts, torch.float64)
    sampled = rollout(model, batch, n_traj=2, mode="sample", generator=torch.Generator().manual_seed(2))
    forced = sampled.actions[..., 1:]
    rewards = -sampled.cost.detach()
    if torch.equal(rewards[:, 0], rewards[:, 1]):
        pytest.skip("degenerate sample: all advantages zero")

    def loss():
        return surrogate_loss(rollout(model, batch, n_traj=2, forced=forced).log_prob, rewards)

    model.zero_grad()
    loss().backward()
    rng = np.random.default_rng(0)
    analytic, numeric = [], []
    eps = 1e-6
    with torch.no_grad():
        for name, p in model.named_parameters():
            flat = p.view(-1)
            for k in rng.choice(flat.numel(), size=min(4, flat.numel()), replace=False):
                old = flat[k].item()
                flat[k] = old + eps
                up = loss().item()
                flat[k] = old - eps
                down = loss().item()
                flat[k] = old
                numeric.append((up - down) / (2 * eps))
                analytic.append(p.grad.view(-1)[k].item())
    analytic, numeric = np.array(analytic), np.array(numeric)
    assert np.linalg.norm(analytic) > 0
    assert np.linalg.norm(analytic - numeric) / np.linalg.norm(analytic) <= 1e-4


# -- training loop -------------------------------------------------------------

def test_zero_epochs_returns_initial_parameters():
    torch.manual_seed(5)
    model = PolicyNet(MICRO)
    before = params(model)
    result = train(TrainConfig(epochs=0, **TINY), model)
    assert result.curve == [] and same_params(before, params(result.model))


def test_curve_length_and_file(tmp_path):
    result = train(TrainConfig(epochs=2, **TINY), curve_path=tmp_path / "c.csv")
    assert [e for e, _, _ in result.curve] == [1, 2]
    rows = list(csv.reader(open(tmp_path / "c.csv")))
    assert rows[0] == ["epoch", "mean_objective", "wall_clock_s"] and len(rows) == 3
    assert all(math.isfinite(float(r[1])) for r in rows[1:])


def test_training_is_reproducible():
    a = train(TrainConfig(epochs=1, **TINY))
    b = train(TrainConfig(epochs=1, **TINY))
    assert same_params(params(a.model), params(b.model)) and a.curve[0][1] == b.curve[0][1]


def test_training_changes_parameters():
    torch.manual_seed(0)
    model = PolicyNet(MICRO)
    before = params(model)
    train(TrainConfig(epochs=1, lr=1e-2, **TINY), model)
    assert not same_params(before, params(model))


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(steps=0)
    with pytest.raises(ValueError):
        TrainConfig(n=5, starts=7)
    with pytest.raises(ValueError):
        TrainConfig(optimizer="rmsprop")


def test_write_curve(tmp_path):
    write_curve([(1, 2.5, 0.1)], tmp_path / "c.csv")
    assert (tmp_path / "c.csv").read_text().splitlines() == ["epoch,mean_objective,wall_clock_s", "1,2.500000,0.100"]


# -- fine-tuning and TSP adaptation ----------------------------------------------

def pretrained():
    torch.manual_seed(3)
    return PolicyNet(MICRO).eval()


def test_finetune_zero_epochs_is_verbatim():
    base = pretrained()
    out = finetune(base, TrainConfig(variant="cvrp", epochs=0, **TINY)).model
    assert out is not base and same_params(params(base), params(out))


def test_finetune_keeps_shapes_and_leaves_input():
    base = pretrained()
    before = params(base)
    out = finetune(base, TrainConfig(variant="cvrp", epochs=1, lr=1e-2, **TINY)).model
    assert same_params(before, params(base))
    assert {k: v.shape for k, v in params(out).items()} == {k: v.shape for k, v in before.items()}


def test_finetune_rejects_plain_mdvrp_and_dim_mismatch():
    with pytest.raises(ValueError):
        finetune(pretrained(), TrainConfig(variant="mdvrp", **TINY))
    big = PolicyNet(PolicyConfig(hidden=16, edge_hidden=4, layers=1, heads=2))
    cfg = TrainConfig(variant="cvrp", **dict(TINY, policy=None))
    with pytest.raises(CheckpointError):
        finetune(big, cfg)


def test_finetune_on_tsp_needs_adaptation():
    with pytest.raises(CheckpointError):
        finetune(pretrained(), TrainConfig(variant="tsp", **TINY))


def test_adapt_for_tsp_drops_exactly_customer_embedding():
    base = pretrained()
    tsp = adapt_for_tsp(base)
    old, new = base.state_dict(), tsp.state_dict()
    assert not any(k.startswith("customer_embed") for k in new)
    assert set(old) - set(new) == {"customer_embed.weight", "customer_embed.bias"}
    for k, v in new.items():
        if k == "W_Q.weight":
            assert v.shape == (MICRO.hidden, MICRO.hidden)
            assert torch.equal(v, old[k][:, : MICRO.hidden])
        else:
            assert torch.equal(v, old[k])


def test_adapted_model_tours_five_nodes():
    tsp = adapt_for_tsp(pretrained())
    inst = generate_instance(GenConfig("tsp", 5, seed=0))
    res = rollout(tsp, PolicyBatch.from_instances([inst]), mode="greedy")
    for j in range(4):
        acts = [a for a in res.actions[0, j].tolist() if a >= 0]
        assert sorted(acts) == [0, 1, 2, 3, 4]
        assert check_feasibility(res.solution(0, j), inst).feasible


def test_adapt_rejects_tsp_and_incomplete_models():
    tsp = adapt_for_tsp(pretrained())
    with pytest.raises(CheckpointError):
        adapt_for_tsp(tsp)


def test_adapted_model_finetunes_on_tsp():
    tsp = adapt_for_tsp(pretrained())
    result = finetune(tsp, TrainConfig(variant="tsp", epochs=1, **TINY))
    assert result.model.config.tsp and len(result.curve) == 1
