from .augment import SQUARE_MAPS, augment_coords, augment_x8
from .checkpoint import (
    FORMAT_VERSION,
    MAGIC,
    CheckpointError,
    CheckpointFormatError,
    load_checkpoint,
    read_checkpoint,
    save_checkpoint,
)
from .env import PolicyBatch, RouteEnv, actions_to_solution
from .model import DESK_CONFIG, FULL_CONFIG, EGATLayer, NumericError, PolicyConfig, PolicyNet
from .rollout import DEFAULT_MAX_STARTS, RolloutResult, default_starts, greedy_solutions, rollout

__all__ = [
    "SQUARE_MAPS",
    "augment_coords",
    "augment_x8",
    "FORMAT_VERSION",
    "MAGIC",
    "CheckpointError",
    "CheckpointFormatError",
    "load_checkpoint",
    "read_checkpoint",
    "save_checkpoint",
    "PolicyBatch",
    "RouteEnv",
    "actions_to_solution",
    "DESK_CONFIG",
    "FULL_CONFIG",
    "EGATLayer",
    "NumericError",
    "PolicyConfig",
    "PolicyNet",
    "DEFAULT_MAX_STARTS",
    "RolloutResult",
    "default_starts",
    "greedy_solutions",
    "rollout",
]
