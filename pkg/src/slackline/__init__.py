"""Desk-scale benchmark for planar bimanual rearrangement of a deformable
linear object under reachability and obstacle constraints."""

from .config import TaskConfig, TrainConfig
from .simulator import ActionPair, EnvState, PickPlace, execute, generate_env, goal_reached, reward

__all__ = [
    "TaskConfig",
    "TrainConfig",
    "ActionPair",
    "EnvState",
    "PickPlace",
    "execute",
    "generate_env",
    "goal_reached",
    "reward",
]

__version__ = "0.1.0"
