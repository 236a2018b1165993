"""Scikit-learn style wrapper around the solve pipeline."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .core import Instance, Solution
from .search.engine import LSConfig
from .solver import SolveConfig, SolveResult, solve


class HybridVRPSolver(BaseEstimator):
    """Solve batches of instances; ``X`` is a sequence of :class:`Instance`.

    ``fit`` loads and checks the policy checkpoint for the neural modes and
    freezes the configuration; it learns nothing from ``X``.  Train policies
    with :func:`hybridvrp.trainer.train` and point ``checkpoint`` at the result.
    """

    def __init__(self, mode="greedy+ls", checkpoint=None, augment=True, max_starts=200, iterations=50, x_max=3,
                 gamma=20, time_budget=None, seed=0):
        self.mode = mode
        self.checkpoint = checkpoint
        self.augment = augment
        self.max_starts = max_starts
        self.iterations = iterations
        self.x_max = x_max
        self.gamma = gamma
        self.time_budget = time_budget
        self.seed = seed

    def _config(self) -> SolveConfig:
        ls = LSConfig(iterations=self.iterations, x_max=self.x_max, gamma=self.gamma, seed=self.seed)
        return SolveConfig(self.mode, self.checkpoint, self.augment, self.max_starts, ls, self.time_budget, self.seed)

    def fit(self, X=None, y=None):
        self.config_ = self._config()
        self.model_ = None
        if self.config_.neural:
            if not self.checkpoint:
                raise ValueError(f"mode {self.mode} needs a checkpoint")
            from .policy import load_checkpoint

            self.model_ = load_checkpoint(self.checkpoint)
        return self

    def solve(self, X) -> list[SolveResult]:
        if not hasattr(self, "config_"):
            raise NotFittedError("call fit before predict")
        instances = [X] if isinstance(X, Instance) else list(X)
        self.results_ = [solve(inst, self.config_, self.model_) for inst in instances]
        return self.results_

    def predict(self, X) -> list[Solution]:
        return [r.solution for r in self.solve(X)]

    def score(self, X, y=None) -> float:
        """Negative mean objective, so larger is better."""
        return -float(np.mean([r.cost for r in self.solve(X)]))
