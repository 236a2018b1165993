"""Policy-gradient training with multi-start shared baselines."""

from __future__ import annotations

import copy
import csv
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from .core import Instance, VariantFlags
from .instances import GenConfig, generate_instance
from .policy.checkpoint import CheckpointError
from .policy.env import PolicyBatch
from .policy.model import DESK_CONFIG, FULL_CONFIG, NumericError, PolicyConfig, PolicyNet
from .policy.rollout import default_starts, greedy_solutions, rollout

log = logging.getLogger(__name__)

EVAL_SEED_OFFSET = 1_000_000


@dataclass
class TrainConfig:
    epochs: int = 5
    steps: int = 100
    batch_size: int = 64
    starts: int | None = None  # defaults to g - 1
    lr: float = 1e-4
    variant: str = "mdvrp"
    n: int = 20
    m: int | None = None
    seed: int = 0
    desk: bool = True
    optimizer: str = "adam"  # or "ascent" for plain gradient ascent
    eval_size: int = 512
    eval_batch: int = 128
    policy: PolicyConfig | None = None
    normalize_advantage: bool = False
    grad_clip: float | None = None

    def __post_init__(self):
        if min(self.steps, self.batch_size, self.n) < 1 or self.epochs < 0:
            raise ValueError("epochs must be >= 0 and steps, batch_size, n positive")
        if not self.lr >= 0:
            raise ValueError("learning rate must be non-negative")
        if self.optimizer not in ("adam", "ascent"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.eval_size < 0:
            raise ValueError("eval_size must be non-negative")
        flags = self.flags
        g = self.gen_config(0).depots + self.n if not flags.tsp_mode else self.n
        if self.starts is not None and not 1 <= self.starts <= g - 1:
            raise ValueError(f"starts must lie in 1..{g - 1}")

    @property
    def flags(self) -> VariantFlags:
        return VariantFlags.from_name(self.variant)

    @property
    def policy_config(self) -> PolicyConfig:
        base = self.policy or (DESK_CONFIG if self.desk else FULL_CONFIG)
        return replace(base, tsp=self.flags.tsp_mode)

    def gen_config(self, seed: int) -> GenConfig:
        return GenConfig(self.flags, self.n, self.m, seed=seed)


@dataclass
class StepResult:
    mean_cost: float
    loss: float


@dataclass
class TrainResult:
    model: PolicyNet
    curve: list[tuple[int, float, float]] = field(default_factory=list)  # epoch, objective, seconds
    initial_objective: float = float("nan")
    train_costs: list[float] = field(default_factory=list)


def shared_baseline(rewards: torch.Tensor) -> torch.Tensor:
    """Per-instance mean reward over its trajectories (rows of a ``B x N`` matrix)."""
    if rewards.dim() != 2 or rewards.shape[1] < 1:
        raise ValueError("rewards must be a B x N matrix with N >= 1")
    return rewards.mean(dim=1)


def surrogate_loss(log_prob: torch.Tensor, rewards: torch.Tensor, normalize: bool = False) -> torch.Tensor:
    """Loss whose negative gradient is the shared-baseline policy gradient."""
    adv = (rewards - shared_baseline(rewards)[:, None]).detach()
    if normalize:
        adv = adv / (adv.std() + 1e-8)
    return -(adv * log_prob).mean()


def make_optimizer(model: PolicyNet, config: TrainConfig) -> torch.optim.Optimizer:
    if config.optimizer == "adam":
        return torch.optim.Adam(model.parameters(), lr=config.lr)
    return torch.optim.SGD(model.parameters(), lr=config.lr)


def training_instances(config: TrainConfig, epoch: int, step: int) -> list[Instance]:
    rng = np.random.default_rng([config.seed, epoch, step])
    gen = config.gen_config(config.seed)
    return [generate_instance(gen, rng) for _ in range(config.batch_size)]


def heldout_instances(config: TrainConfig) -> list[Instance]:
    base = EVAL_SEED_OFFSET + config.seed
    return [generate_instance(config.gen_config(base + i)) for i in range(config.eval_size)]


def reinforce_step(model: PolicyNet, optimizer: torch.optim.Optimizer, instances: list[Instance],
                   config: TrainConfig, generator: torch.Generator | None = None) -> StepResult:
    model.train()
    dtype = next(model.parameters()).dtype
    batch = PolicyBatch.from_instances(instances, dtype=dtype)
    res = rollout(model, batch, config.starts or default_starts(batch.g), "sample", generator=generator)
    loss = surrogate_loss(res.log_prob, -res.cost, config.normalize_advantage)
    optimizer.zero_grad(set_to_none=False)
    loss.backward()
    bad = [name for name, p in model.named_parameters() if p.grad is not None and not torch.isfinite(p.grad).all()]
    if bad:
        optimizer.zero_grad()
        raise NumericError(f"non-finite gradient in {', '.join(bad)} (loss {float(loss.detach()):.6g})")
    if config.grad_clip:
        torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
    optimizer.step()
    return StepResult(float(res.cost.detach().mean()), float(loss.detach()))


def evaluate(model: PolicyNet, instances: list[Instance], starts: int | None = None, batch_size: int = 128) -> float:
    """Mean best-of-starts greedy objective."""
    if not instances:
        return float("nan")
    results = greedy_solutions(model, instances, starts, batch_size)
    return float(np.mean([c for _, c in results]))


def train(config: TrainConfig, model: PolicyNet | None = None, curve_path=None,
          on_epoch: Callable[[int, float], None] | None = None) -> TrainResult:
    """Train from scratch (or continue ``model``) for ``config.epochs`` epochs."""
    torch.manual_seed(config.seed)
    if model is None:
        model = PolicyNet(config.policy_config)
    elif model.config.tsp != config.flags.tsp_mode:
        raise CheckpointError("model architecture does not match the training variant")
    generator = torch.Generator().manual_seed(config.seed)
    optimizer = make_optimizer(model, config)
    heldout = heldout_instances(config)
    result = TrainResult(model)
    result.initial_objective = evaluate(model, heldout, config.starts, config.eval_batch)
    t0 = time.perf_counter()
    for epoch in range(1, config.epochs + 1):
        costs = [
            reinforce_step(model, optimizer, training_instances(config, epoch, step), config, generator).mean_cost
            for step in range(config.steps)
        ]
        result.train_costs.append(float(np.mean(costs)))
        objective = evaluate(model, heldout, config.starts, config.eval_batch)
        result.curve.append((epoch, objective, time.perf_counter() - t0))
        log.info("epoch %d: held-out objective %.4f, train cost %.4f", epoch, objective, result.train_costs[-1])
        if on_epoch is not None:
            on_epoch(epoch, objective)
    model.eval()
    if curve_path is not None:
        write_curve(result.curve, curve_path)
    return result


def write_curve(curve, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "mean_objective", "wall_clock_s"])
        for epoch, obj, secs in curve:
            w.writerow([epoch, f"{obj:.6f}", f"{secs:.3f}"])


def _check_dims(pretrained: PolicyNet, config: TrainConfig) -> None:
    want = config.policy_config
    have = pretrained.config
    for name in ("hidden", "edge_hidden", "layers", "heads", "ff"):
        if getattr(want, name) != getattr(have, name):
            raise CheckpointError(
                f"checkpoint {name}={getattr(have, name)} does not match config {name}={getattr(want, name)}"
            )


def finetune(pretrained: PolicyNet, config: TrainConfig, curve_path=None) -> TrainResult:
    """Continue training a pre-trained policy on another variant with unchanged architecture."""
    if config.flags == VariantFlags(multi_depot=True):
        raise ValueError("fine-tuning targets a variant other than plain MDVRP")
    if config.flags.tsp_mode and not pretrained.config.tsp:
        raise CheckpointError("adapt the checkpoint for TSP before fine-tuning on TSP")
    _check_dims(pretrained, config)
    config = replace(config, policy=pretrained.config)
    return train(config, copy.deepcopy(pretrained), curve_path)


# Tensors whose names start with these prefixes are dropped when adapting for TSP.
TSP_DROPPED = ("customer_embed.",)


def adapt_for_tsp(pretrained: PolicyNet) -> PolicyNet:
    """TSP architecture: no customer embedding and a query without dynamic inputs."""
    if pretrained.config.tsp:
        raise CheckpointError("checkpoint is already a TSP policy")
    state = pretrained.state_dict()
    needed = {"W_Q.weight", "depot_embed.weight", "edge_embed.weight", "customer_embed.weight"}
    missing = sorted(needed - set(state))
    if missing:
        raise CheckpointError(f"pretrained parameters lack {missing}")
    model = PolicyNet(replace(pretrained.config, tsp=True))
    h = pretrained.config.hidden
    new_state = {}
    for name, tensor in state.items():
        if name.startswith(TSP_DROPPED):
            continue
        if name == "W_Q.weight":
            tensor = tensor[:, :h]
        new_state[name] = tensor.clone()
    model.load_state_dict(new_state)
    model.eval()
    return model
