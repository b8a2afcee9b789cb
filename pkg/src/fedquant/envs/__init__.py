from .bandit import BanditEnv, Component, default_bandit_family
from .grid import (
    GridConfig,
    GridEnv,
    GridState,
    HeteroRanges,
    Transition,
    make_heterogeneous_family,
    reachable,
    task_connected,
)

__all__ = [
    "BanditEnv", "Component", "default_bandit_family",
    "GridConfig", "GridEnv", "GridState", "HeteroRanges", "Transition",
    "make_heterogeneous_family", "reachable", "task_connected",
]
