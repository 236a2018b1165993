from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import Instance

DEFAULT_GAMMA = 20


@dataclass
class NeighborLists:
    """Granular neighborhoods: for each customer, its nearest other customers."""

    gamma: int
    # Row per node id (depot rows stay empty), padded with -1.
    array: np.ndarray

    def __getitem__(self, customer: int) -> list[int]:
        row = self.array[customer]
        return row[row >= 0].tolist()


def build_granular_neighbors(instance: Instance, gamma: int = DEFAULT_GAMMA) -> NeighborLists:
    if instance.n < 1:
        raise ValueError("instance has no customers")
    if gamma < 1:
        raise ValueError("gamma must be positive")
    custs = np.arange(instance.m, instance.g)
    width = min(gamma, instance.n - 1)
    arr = np.full((instance.g, max(width, 1)), -1, dtype=np.int64)
    if width == 0:
        return NeighborLists(gamma, arr)
    for a in custs:
        others = custs[custs != a]
        d = instance.dist[a, others]
        # lexsort sorts by the last key first: distance, then index.
        order = np.lexsort((others, d))
        arr[a, :width] = others[order[:width]]
    return NeighborLists(gamma, arr)
