"""Edge-aware graph attention encoder and attention decoder."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
from torch import nn
from torch.nn import functional as F

CUSTOMER_FEATURES = 5  # x, y, signed demand, window start, window end
DEPOT_FEATURES = 2  # x, y
DYNAMIC_FEATURES = 4  # remaining load, clock, route length, open-route flag


class NumericError(FloatingPointError):
    pass


@dataclass(frozen=True)
class PolicyConfig:
    hidden: int = 256
    edge_hidden: int = 32
    layers: int = 5
    heads: int = 16
    clip: float = 10.0
    ff_hidden: int | None = None
    tsp: bool = False

    def __post_init__(self):
        if self.hidden % self.heads:
            raise ValueError(f"hidden size {self.hidden} not divisible by {self.heads} heads")
        if min(self.hidden, self.edge_hidden, self.heads) < 1 or self.layers < 0:
            raise ValueError("dimensions must be positive")

    @property
    def ff(self) -> int:
        return self.ff_hidden or 2 * self.hidden

    def to_dict(self) -> dict:
        return asdict(self)


FULL_CONFIG = PolicyConfig()
DESK_CONFIG = PolicyConfig(hidden=64, edge_hidden=16, layers=2, heads=8)


class EGATLayer(nn.Module):
    """One attention layer whose scores see both endpoints and the edge embedding."""

    def __init__(self, hidden: int, edge_hidden: int, ff_hidden: int, negative_slope: float = 0.2):
        super().__init__()
        self.hidden = hidden
        self.W1 = nn.Linear(2 * hidden + edge_hidden, hidden, bias=False)
        self.a = nn.Parameter(torch.empty(hidden))
        self.W2 = nn.Linear(hidden, hidden, bias=False)
        self.bn1 = nn.BatchNorm1d(hidden)
        self.ff = nn.Sequential(nn.Linear(hidden, ff_hidden), nn.ReLU(), nn.Linear(ff_hidden, hidden))
        self.bn2 = nn.BatchNorm1d(hidden)
        self.negative_slope = negative_slope
        nn.init.uniform_(self.a, -1 / math.sqrt(hidden), 1 / math.sqrt(hidden))

    def attention(self, x: torch.Tensor, e: torch.Tensor) -> torch.Tensor:
        """Coefficients ``alpha[b, i, j]``; rows sum to one."""
        # a^T W1 [x_i || x_j || e_ij] is linear, so project the pieces separately.
        w = self.W1.weight.t() @ self.a
        h = self.hidden
        s_i = x @ w[:h]
        s_j = x @ w[h: 2 * h]
        s_e = e @ w[2 * h:]
        scores = F.leaky_relu(s_i[:, :, None] + s_j[:, None, :] + s_e, self.negative_slope)
        return torch.softmax(scores, dim=-1)

    @staticmethod
    def _bn(bn: nn.BatchNorm1d, x: torch.Tensor) -> torch.Tensor:
        b, g, h = x.shape
        return bn(x.reshape(b * g, h)).reshape(b, g, h)

    def forward(self, x: torch.Tensor, e: torch.Tensor) -> torch.Tensor:
        alpha = self.attention(x, e)
        x = self._bn(self.bn1, x + alpha @ self.W2(x))
        return self._bn(self.bn2, x + self.ff(x))


@dataclass
class Encoded:
    """Encoder output plus the decoder projections that only depend on it."""

    x: torch.Tensor  # [B, g, h]
    glimpse_k: torch.Tensor  # [B, H, g, h/H]
    glimpse_v: torch.Tensor
    logit_k: torch.Tensor  # [B, g, h]


class PolicyNet(nn.Module):
    def __init__(self, config: PolicyConfig = FULL_CONFIG):
        super().__init__()
        self.config = config
        h = config.hidden
        if not config.tsp:
            self.customer_embed = nn.Linear(CUSTOMER_FEATURES, h)  # A0, b0
        self.depot_embed = nn.Linear(DEPOT_FEATURES, h)  # A1, b1
        self.edge_embed = nn.Linear(1, config.edge_hidden)  # A2, b2
        self.layers = nn.ModuleList(
            EGATLayer(h, config.edge_hidden, config.ff) for _ in range(config.layers)
        )
        self.W_K = nn.Linear(h, h, bias=False)
        self.W_V = nn.Linear(h, h, bias=False)
        self.W_Q = nn.Linear(h + (0 if config.tsp else DYNAMIC_FEATURES), h, bias=False)
        self.W_O = nn.Linear(h, h, bias=False)
        self.W_L = nn.Linear(h, h, bias=False)  # single-head logit keys

    # -- encoder -----------------------------------------------------------

    def embed(self, customer_feats: torch.Tensor, depot_feats: torch.Tensor, dist: torch.Tensor):
        """Initial node rows (depots first) and edge embeddings."""
        if self.config.tsp:
            x = self.depot_embed(depot_feats)
        else:
            x = torch.cat([self.depot_embed(depot_feats), self.customer_embed(customer_feats)], dim=1)
        e = self.edge_embed(dist.unsqueeze(-1))
        return x, e

    def encode(self, customer_feats, depot_feats, dist) -> torch.Tensor:
        x, e = self.embed(customer_feats, depot_feats, dist)
        for idx, layer in enumerate(self.layers):
            x = layer(x, e)
            if not torch.isfinite(x).all():
                raise NumericError(f"non-finite activation after encoder layer {idx}")
        return x

    def precompute(self, x: torch.Tensor) -> Encoded:
        b, g, h = x.shape
        heads = self.config.heads

        def split(t):
            return t.reshape(b, g, heads, h // heads).transpose(1, 2)

        return Encoded(x, split(self.W_K(x)), split(self.W_V(x)), self.W_L(x))

    # -- decoder -----------------------------------------------------------

    def logits(self, enc: Encoded, current: torch.Tensor, dynamic: torch.Tensor | None,
               mask: torch.Tensor) -> torch.Tensor:
        """Masked, clipped compatibilities ``[B, N, g]`` for trajectories at ``current`` ``[B, N]``.

        ``mask`` is True where a node is selectable.
        """
        b, n = current.shape
        h = self.config.hidden
        heads = self.config.heads
        hv = h // heads
        if dynamic is None and not self.config.tsp:
            raise ValueError("a routing policy needs dynamic features; use a TSP-adapted model for tours")
        idx = current.unsqueeze(-1).expand(b, n, h)
        x_cur = enc.x.gather(1, idx)
        ctx = x_cur if self.config.tsp else torch.cat([x_cur, dynamic], dim=-1)
        q = self.W_Q(ctx).reshape(b, n, heads, hv).transpose(1, 2)  # [B, H, N, hv]
        compat = q @ enc.glimpse_k.transpose(-1, -2) / math.sqrt(hv)  # [B, H, N, g]
        compat = compat.masked_fill(~mask.unsqueeze(1), float("-inf"))
        glimpse = torch.softmax(compat, dim=-1) @ enc.glimpse_v  # [B, H, N, hv]
        glimpse = self.W_O(glimpse.transpose(1, 2).reshape(b, n, h))
        u = glimpse @ enc.logit_k.transpose(-1, -2) / math.sqrt(h)
        u = self.config.clip * torch.tanh(u)
        return u.masked_fill(~mask, float("-inf"))

    def log_probs(self, enc: Encoded, current, dynamic, mask) -> torch.Tensor:
        if not mask.any(dim=-1).all():
            raise RuntimeError("decoder called with a fully masked row")
        return torch.log_softmax(self.logits(enc, current, dynamic, mask), dim=-1)
