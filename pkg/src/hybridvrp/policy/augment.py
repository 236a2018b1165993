"""The eight symmetries of the unit square applied to instance coordinates."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from ..core import Instance, InstanceError

# Each map sends (x, y) to a point of the unit square; the identity comes first.
SQUARE_MAPS = (
    lambda x, y: (x, y),
    lambda x, y: (y, x),
    lambda x, y: (x, 1 - y),
    lambda x, y: (y, 1 - x),
    lambda x, y: (1 - x, y),
    lambda x, y: (1 - y, x),
    lambda x, y: (1 - x, 1 - y),
    lambda x, y: (1 - y, 1 - x),
)


def augment_coords(coords: np.ndarray) -> list[np.ndarray]:
    x, y = coords[:, 0], coords[:, 1]
    return [np.column_stack(f(x, y)).astype(np.float64) for f in SQUARE_MAPS]


def augment_x8(instance: Instance) -> list[Instance]:
    """Eight equivalent images of a unit-square instance.

    Every image keeps the original distance matrix, demands, windows and flags,
    so any solution has the same cost on all of them.
    """
    c = instance.coords
    if c.size and (c.min() < 0 or c.max() > 1):
        raise InstanceError("augmentation needs coordinates inside the unit square")
    return [
        replace(instance, coords=img, dist=instance.dist.copy(), meta=dict(instance.meta, augmentation=k))
        for k, img in enumerate(augment_coords(c))
    ]
