"""Multi-start decoding with the policy network."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from ..core import Instance, Solution
from .env import PolicyBatch, RouteEnv, actions_to_solution
from .model import PolicyNet

DEFAULT_MAX_STARTS = 200


def default_starts(g: int, cap: int = DEFAULT_MAX_STARTS) -> int:
    return max(1, min(g - 1, cap))


@dataclass
class RolloutResult:
    actions: torch.Tensor  # [B, N, T], padded with -1
    log_prob: torch.Tensor  # [B, N], summed over steps
    cost: torch.Tensor  # [B, N], total distance in normalized units
    m: int
    tsp: bool
    scales: torch.Tensor = field(default_factory=lambda: torch.ones(0))

    @property
    def reward(self) -> torch.Tensor:
        return -self.cost

    def solution(self, b: int, j: int) -> Solution:
        return actions_to_solution(self.actions[b, j].tolist(), self.m, self.tsp)

    def best(self, b: int) -> tuple[int, Solution]:
        j = int(torch.argmin(self.cost[b]))
        return j, self.solution(b, j)


def _start_actions(env: RouteEnv, n_traj: int) -> list[torch.Tensor]:
    """Forced opening actions for trajectory ``j``, whose start node is ``j + 1``.

    A depot start opens a route there; a customer start departs from depot 0.
    """
    B = env.B
    starts = torch.arange(1, n_traj + 1)
    if env.tsp:
        return [starts[None].expand(B, n_traj).clone()]
    m = env.m
    first = torch.where(starts < m, starts, torch.zeros_like(starts))[None].expand(B, n_traj).clone()
    env.step(first)
    second = starts[None].expand(B, n_traj).clone()
    allowed = env.mask().gather(-1, second[..., None]).squeeze(-1)
    # Starts that cannot open a route from depot 0 (e.g. backhauls) are decoded freely.
    force = (starts[None] >= m) & allowed
    return [first, torch.where(force, second, torch.full_like(second, -1))]


def rollout(model: PolicyNet, batch: PolicyBatch, n_traj: int | None = None, mode: str = "greedy",
            generator: torch.Generator | None = None, forced: torch.Tensor | None = None) -> RolloutResult:
    """Decode ``n_traj`` trajectories per instance.

    ``mode`` is ``greedy`` or ``sample``.  ``forced`` ([B, N, T] with -1 padding)
    replays given actions after the opening ones and scores them (teacher forcing).
    """
    if mode not in ("greedy", "sample"):
        raise ValueError(f"unknown decode mode {mode!r}")
    tsp = batch.variant.tsp_mode
    n_traj = n_traj or default_starts(batch.g)
    if not 1 <= n_traj <= batch.g - 1:
        raise ValueError(f"start count {n_traj} outside 1..{batch.g - 1}")
    x = model.encode(batch.customer_feats, batch.depot_feats, batch.dist)
    enc = model.precompute(x)
    env = RouteEnv(batch, n_traj)
    opening = _start_actions(env, n_traj)
    B = batch.size
    history = [opening[0]]
    log_prob = torch.zeros(B, n_traj, dtype=x.dtype)
    pending = opening[1] if len(opening) > 1 else None
    if tsp:
        env.step(opening[0])
    step = 0
    limit = 4 * batch.g + 4
    while not bool(env.done.all()):
        if step > limit:
            raise RuntimeError("decoding did not terminate")
        mask = env.mask()
        dyn = None if tsp else env.dynamic_features().to(x.dtype)
        logp = model.log_probs(enc, env.cur, dyn, mask)
        if forced is not None and step < forced.shape[-1]:
            choice = forced[..., step].clone()
            free = choice < 0
            if free.any():
                choice = torch.where(free, logp.argmax(-1), choice)
        elif mode == "greedy":
            choice = logp.argmax(-1)
        else:
            probs = logp.exp().reshape(-1, batch.g)
            choice = torch.multinomial(probs, 1, generator=generator).reshape(B, n_traj)
        if pending is not None:
            choice = torch.where(pending >= 0, pending, choice)
            forced_now = pending >= 0
            pending = None
        else:
            forced_now = torch.zeros_like(env.done)
        if not bool(mask.gather(-1, choice[..., None]).all()):
            raise RuntimeError("selected a masked node")
        picked = logp.gather(-1, choice[..., None]).squeeze(-1)
        counts = ~env.done & ~forced_now
        log_prob = log_prob + torch.where(counts, picked, torch.zeros_like(picked))
        history.append(torch.where(env.done, torch.full_like(choice, -1), choice))
        env.step(choice)
        step += 1
    actions = torch.stack(history, dim=-1)
    return RolloutResult(actions, log_prob, env.total, 1 if tsp else batch.m, tsp, batch.scales)


@torch.no_grad()
def greedy_solutions(model: PolicyNet, instances: list[Instance], n_traj: int | None = None,
                     batch_size: int = 64) -> list[tuple[Solution, float]]:
    """Best greedy trajectory per instance with its cost in the instance's own units."""
    model.eval()
    out: list[tuple[Solution, float]] = []
    for k in range(0, len(instances), batch_size):
        chunk = instances[k: k + batch_size]
        batch = PolicyBatch.from_instances(chunk, dtype=next(model.parameters()).dtype)
        res = rollout(model, batch, n_traj or default_starts(batch.g), "greedy")
        for b in range(len(chunk)):
            j, sol = res.best(b)
            out.append((sol, float(res.cost[b, j] * batch.scales[b])))
    return out
