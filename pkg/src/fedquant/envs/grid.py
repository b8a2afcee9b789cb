"""Single-agent warehouse gridworld with a stochastic hazard zone.

The agent carries one object from its start cell to the object goal and
then walks to its own goal. One cell of the hazard zone is active per
episode; ending a step on it fires a catastrophe with probability
``p_haz`` (penalty, episode ends). Moves slip to a random other direction
with probability ``slip_prob``.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

Cell = tuple[int, int]

UP, DOWN, LEFT, RIGHT, STAY, PICK, DROP = range(7)
_DELTAS = {UP: (-1, 0), DOWN: (1, 0), LEFT: (0, -1), RIGHT: (0, 1), STAY: (0, 0)}
_DIRECTIONS = (UP, DOWN, LEFT, RIGHT)
# object status
AT_START, CARRIED, DELIVERED = 0, 1, 2


def _cells(xs) -> tuple[Cell, ...]:
    return tuple((int(r), int(c)) for r, c in xs)


@dataclass(frozen=True)
class GridConfig:
    width: int = 7
    height: int = 7
    obstacles: tuple[Cell, ...] = ((3, 0), (3, 1), (3, 3), (3, 4), (3, 5))
    hazard_zone: tuple[Cell, ...] = ((2, 2), (3, 2), (4, 2))
    agent_start: Cell = (6, 0)
    agent_goal: Cell = (0, 6)
    object_start: Cell = (6, 2)
    object_goal: Cell = (0, 2)
    slip_prob: float = 0.05
    p_haz: float = 0.08
    horizon: int = 60
    step_cost: float = -0.02
    catastrophe_penalty: float = -5.0
    r_obj: float = 1.0
    r_goal: float = 2.0
    explicit_pick_drop: bool = False

    def __post_init__(self):
        for name in ("obstacles", "hazard_zone"):
            object.__setattr__(self, name, _cells(getattr(self, name)))
        for name in ("agent_start", "agent_goal", "object_start", "object_goal"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        self.validate()

    def validate(self) -> None:
        if self.width < 2 or self.height < 2:
            raise ValueError("grid must be at least 2x2")
        if not (0 <= self.slip_prob <= 1 and 0 <= self.p_haz <= 1):
            raise ValueError("slip_prob and p_haz must lie in [0, 1]")
        if self.horizon < 1:
            raise ValueError("horizon must be positive")
        if not self.hazard_zone:
            raise ValueError("hazard zone needs at least one cell")
        blocked = set(self.obstacles)
        for name in ("agent_start", "agent_goal", "object_start", "object_goal"):
            cell = getattr(self, name)
            if not self.in_bounds(cell):
                raise ValueError(f"{name} {cell} is outside the grid")
            if cell in blocked:
                raise ValueError(f"{name} {cell} is an obstacle")
        for cell in self.hazard_zone + self.obstacles:
            if not self.in_bounds(cell):
                raise ValueError(f"cell {cell} is outside the grid")
        if blocked & set(self.hazard_zone):
            raise ValueError("hazard cells cannot be obstacles")

    def in_bounds(self, cell: Cell) -> bool:
        return 0 <= cell[0] < self.height and 0 <= cell[1] < self.width


@dataclass(frozen=True)
class GridState:
    agent: Cell
    obj: int
    hazard: int
    t: int = 0


@dataclass(frozen=True)
class Transition:
    state: GridState
    action: int
    reward: float
    next_state: GridState
    done: bool
    catastrophe: bool
    terminal: bool
    truncated: bool


class GridEnv:
    def __init__(self, cfg: GridConfig | None = None, seed: int = 0):
        self.cfg = cfg or GridConfig()
        self.rng = np.random.default_rng(seed)
        self._blocked = frozenset(self.cfg.obstacles)
        self.n_actions = 7 if self.cfg.explicit_pick_drop else 5
        self.n_hazard = len(self.cfg.hazard_zone)
        self.n_states = self.cfg.width * self.cfg.height * 3 * self.n_hazard
        self.feature_dim = 6

    # -- encoding -----------------------------------------------------------------
    def encode(self, state: GridState) -> int:
        r, c = state.agent
        cell = r * self.cfg.width + c
        return (cell * 3 + state.obj) * self.n_hazard + state.hazard

    def decode(self, index: int) -> GridState:
        if not 0 <= index < self.n_states:
            raise ValueError(f"state index {index} out of range")
        rest, hazard = divmod(int(index), self.n_hazard)
        cell, obj = divmod(rest, 3)
        return GridState(divmod(cell, self.cfg.width), obj, hazard)

    def features(self, state: GridState) -> np.ndarray:
        h, w = self.cfg.height - 1, self.cfg.width - 1
        hz = self.cfg.hazard_zone[state.hazard]
        return np.array([state.agent[0] / h, state.agent[1] / w,
                         float(state.obj == CARRIED), float(state.obj == DELIVERED),
                         hz[0] / h, hz[1] / w])

    # -- dynamics -------------------------------------------------------------------
    def reset(self) -> GridState:
        return GridState(self.cfg.agent_start, AT_START, int(self.rng.integers(self.n_hazard)), 0)

    def _check(self, state: GridState, action: int) -> None:
        if not isinstance(state, GridState):
            raise TypeError("state must be a GridState")
        if not self.cfg.in_bounds(state.agent) or state.agent in self._blocked:
            raise ValueError(f"malformed state: agent at {state.agent}")
        if state.obj not in (AT_START, CARRIED, DELIVERED) or not 0 <= state.hazard < self.n_hazard:
            raise ValueError("malformed state: object status or hazard index")
        if not 0 <= action < self.n_actions:
            raise ValueError(f"invalid action {action}")

    def step(self, state: GridState, action: int) -> Transition:
        self._check(state, action)
        cfg = self.cfg
        rng = self.rng
        move = action
        if move in _DIRECTIONS and cfg.slip_prob > 0 and rng.random() < cfg.slip_prob:
            others = [d for d in _DIRECTIONS if d != move]
            move = others[int(rng.integers(3))]
        pos = state.agent
        if move in _DELTAS:
            dr, dc = _DELTAS[move]
            nxt = (pos[0] + dr, pos[1] + dc)
            if cfg.in_bounds(nxt) and nxt not in self._blocked:
                pos = nxt

        reward = cfg.step_cost
        obj = state.obj
        if cfg.explicit_pick_drop:
            if action == PICK and obj == AT_START and pos == cfg.object_start:
                obj = CARRIED
            elif action == DROP and obj == CARRIED and pos == cfg.object_goal:
                obj = DELIVERED
                reward += cfg.r_obj
        else:
            if obj == AT_START and pos == cfg.object_start:
                obj = CARRIED
            if obj == CARRIED and pos == cfg.object_goal:
                obj = DELIVERED
                reward += cfg.r_obj

        catastrophe = False
        terminal = False
        if pos == cfg.hazard_zone[state.hazard] and cfg.p_haz > 0 and rng.random() < cfg.p_haz:
            catastrophe = terminal = True
            reward += cfg.catastrophe_penalty
        elif obj == DELIVERED and pos == cfg.agent_goal:
            terminal = True
            reward += cfg.r_goal
        t = state.t + 1
        truncated = not terminal and t >= cfg.horizon
        nxt_state = GridState(pos, obj, state.hazard, t)
        return Transition(state, action, float(reward), nxt_state, terminal or truncated,
                          catastrophe, terminal, truncated)

    # -- documentation ----------------------------------------------------------------
    def ascii_map(self, hazard: int | None = None) -> str:
        cfg = self.cfg
        rows = []
        for r in range(cfg.height):
            row = []
            for c in range(cfg.width):
                cell = (r, c)
                ch = "."
                if cell in self._blocked:
                    ch = "#"
                elif hazard is not None and cell == cfg.hazard_zone[hazard]:
                    ch = "X"
                elif cell in cfg.hazard_zone:
                    ch = "h"
                for mark, at in (("o", cfg.object_start), ("O", cfg.object_goal),
                                 ("S", cfg.agent_start), ("G", cfg.agent_goal)):
                    if cell == at:
                        ch = mark
                row.append(ch)
            rows.append(" ".join(row))
        return "\n".join(rows)


def reachable(cfg: GridConfig, src: Cell, dst: Cell) -> bool:
    """BFS over free cells (hazard cells are passable)."""
    blocked = set(cfg.obstacles)
    seen = {src}
    queue = deque([src])
    while queue:
        cell = queue.popleft()
        if cell == dst:
            return True
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            nxt = (cell[0] + dr, cell[1] + dc)
            if cfg.in_bounds(nxt) and nxt not in blocked and nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return False


def task_connected(cfg: GridConfig) -> bool:
    legs = [(cfg.agent_start, cfg.object_start), (cfg.object_start, cfg.object_goal),
            (cfg.object_goal, cfg.agent_goal)]
    return all(reachable(cfg, a, b) for a, b in legs)


@dataclass(frozen=True)
class HeteroRanges:
    """Per-client perturbation ranges for ``make_heterogeneous_family``."""

    p_haz: tuple[float, float] = (0.05, 0.12)
    slip_prob: tuple[float, float] = (0.0, 0.1)
    horizon: tuple[int, int] = (50, 70)
    step_cost: tuple[float, float] = (-0.03, -0.01)
    catastrophe_penalty: tuple[float, float] = (-6.0, -4.0)
    extra_obstacles: tuple[int, int] = (0, 3)
    hazard_shift: int = 1
    object_jitter: int = 1
    max_retries: int = 200
    protected: Sequence[Cell] = field(default_factory=tuple)


def _jitter(rng, cell: Cell, radius: int) -> Cell:
    if radius <= 0:
        return cell
    return (cell[0] + int(rng.integers(-radius, radius + 1)), cell[1] + int(rng.integers(-radius, radius + 1)))


def _perturb(base: GridConfig, rng: np.random.Generator, ranges: HeteroRanges) -> GridConfig:
    shift = (int(rng.integers(-ranges.hazard_shift, ranges.hazard_shift + 1)),
             int(rng.integers(-ranges.hazard_shift, ranges.hazard_shift + 1)))
    hazard = tuple((r + shift[0], c + shift[1]) for r, c in base.hazard_zone)
    obj_start = _jitter(rng, base.object_start, ranges.object_jitter)
    obj_goal = _jitter(rng, base.object_goal, ranges.object_jitter)
    special = {base.agent_start, base.agent_goal, obj_start, obj_goal, *hazard, *ranges.protected}
    free = [(r, c) for r in range(base.height) for c in range(base.width)
            if (r, c) not in special and (r, c) not in base.obstacles]
    n_extra = int(rng.integers(ranges.extra_obstacles[0], ranges.extra_obstacles[1] + 1))
    picks = rng.choice(len(free), size=min(n_extra, len(free)), replace=False) if n_extra else []
    obstacles = tuple(c for c in base.obstacles if c not in special) + tuple(free[i] for i in picks)
    return replace(
        base,
        obstacles=obstacles,
        hazard_zone=hazard,
        object_start=obj_start,
        object_goal=obj_goal,
        p_haz=float(rng.uniform(*ranges.p_haz)),
        slip_prob=float(rng.uniform(*ranges.slip_prob)),
        horizon=int(rng.integers(ranges.horizon[0], ranges.horizon[1] + 1)),
        step_cost=float(rng.uniform(*ranges.step_cost)),
        catastrophe_penalty=float(rng.uniform(*ranges.catastrophe_penalty)),
    )


def make_heterogeneous_family(base: GridConfig, n: int, seed: int,
                              ranges: HeteroRanges | None = None) -> list[GridConfig]:
    """Client 0 keeps ``base``; clients 1..n-1 get seeded perturbations.

    Every config shares the grid size, hazard-zone size and action set, so
    the state spaces coincide across clients.
    """
    if n < 1:
        raise ValueError("need at least one client")
    ranges = ranges or HeteroRanges()
    if not task_connected(base):
        raise ValueError("base layout has no start-object-goal path")
    rng = np.random.default_rng(seed)
    family = [base]
    for i in range(1, n):
        for _ in range(ranges.max_retries):
            try:
                cfg = _perturb(base, rng, ranges)
            except ValueError:
                continue
            if task_connected(cfg):
                family.append(cfg)
                break
        else:
            raise RuntimeError(f"could not build a connected layout for client {i}")
    return family
