"""Deterministic Four Rooms gridworld.

Cells are addressed as ``GridPos(x, y)`` with ``x`` the column and ``y`` the
row, both 0-based from the top-left corner.  Free cells are enumerated in
row-major order; that enumeration is the state axis used everywhere else in
the package.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import IntEnum
from typing import NamedTuple

import numpy as np

LAYOUT = (
    "wwwwwwwwwwwww",
    "w     w     w",
    "w     w     w",
    "w           w",
    "w     w     w",
    "w     w     w",
    "ww wwww     w",
    "w     www www",
    "w     w     w",
    "w     w     w",
    "w           w",
    "w     w     w",
    "wwwwwwwwwwwww",
)

MAX_STEPS = 1000
N_ACTIONS = 4

ROOMS = ("top_left", "top_right", "bottom_left", "bottom_right")
TRAIN_ROOMS = ("top_left", "top_right", "bottom_left")
TEST_ROOMS = ("bottom_right",)


class GridPos(NamedTuple):
    x: int
    y: int


class Action(IntEnum):
    UP = 0
    DOWN = 1
    LEFT = 2
    RIGHT = 3


_MOVES = {
    Action.UP: (0, -1),
    Action.DOWN: (0, 1),
    Action.LEFT: (-1, 0),
    Action.RIGHT: (1, 0),
}

ARROWS = {Action.UP: "↑", Action.DOWN: "↓", Action.LEFT: "←", Action.RIGHT: "→"}


class WallError(ValueError):
    """Raised when a wall cell is used as an agent or goal position."""


@dataclass(frozen=True, eq=False)
class FourRoomsWorld:
    """Immutable world geometry plus the goal of the current task.

    ``next_state`` is a precomputed ``(n_states, 4)`` table of successor
    state indices so the tabular learners never touch coordinates in their
    inner loops.
    """

    walls: np.ndarray
    goal: GridPos
    max_steps: int = MAX_STEPS
    states: tuple[GridPos, ...] = field(init=False, repr=False)
    index: dict[GridPos, int] = field(init=False, repr=False)
    next_state: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        walls = np.asarray(self.walls, dtype=bool)
        walls.setflags(write=False)
        object.__setattr__(self, "walls", walls)
        states = tuple(
            GridPos(x, y)
            for y in range(walls.shape[0])
            for x in range(walls.shape[1])
            if not walls[y, x]
        )
        index = {p: i for i, p in enumerate(states)}
        nxt = np.empty((len(states), N_ACTIONS), dtype=np.int64)
        for i, p in enumerate(states):
            for a in Action:
                nxt[i, a] = index[_move(walls, p, a)]
        nxt.setflags(write=False)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "index", index)
        object.__setattr__(self, "next_state", nxt)
        goal = GridPos(*self.goal)
        if not self.is_free(goal):
            raise WallError(f"goal {goal} is a wall cell")
        object.__setattr__(self, "goal", goal)

    @property
    def width(self) -> int:
        return self.walls.shape[1]

    @property
    def height(self) -> int:
        return self.walls.shape[0]

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def goal_index(self) -> int:
        return self.index[self.goal]

    def is_free(self, pos) -> bool:
        x, y = pos
        return 0 <= x < self.width and 0 <= y < self.height and not self.walls[y, x]

    def with_goal(self, goal) -> "FourRoomsWorld":
        return FourRoomsWorld(self.walls, GridPos(*goal), self.max_steps)


def _move(walls: np.ndarray, pos: GridPos, a: int) -> GridPos:
    dx, dy = _MOVES[Action(a)]
    x, y = pos.x + dx, pos.y + dy
    if 0 <= y < walls.shape[0] and 0 <= x < walls.shape[1] and not walls[y, x]:
        return GridPos(x, y)
    return pos


def parse_layout(rows=LAYOUT) -> np.ndarray:
    if len({len(r) for r in rows}) != 1:
        raise ValueError("layout rows must have equal length")
    return np.array([[c == "w" for c in r] for r in rows], dtype=bool)


def load_layout(goal=GridPos(11, 11), max_steps: int = MAX_STEPS) -> FourRoomsWorld:
    """Return the canonical 13x13 Four Rooms world."""
    return FourRoomsWorld(parse_layout(LAYOUT), GridPos(*goal), max_steps)


def step(world: FourRoomsWorld, pos, a) -> tuple[GridPos, int, bool]:
    pos = GridPos(*pos)
    if not world.is_free(pos):
        raise WallError(f"position {pos} is a wall cell")
    nxt = _move(world.walls, pos, a)
    reached = nxt == world.goal
    return nxt, int(reached), reached


def bfs_distances(world: FourRoomsWorld, goal=None) -> dict[GridPos, int]:
    """Shortest-path step counts from every reachable free cell to ``goal``."""
    goal = world.goal if goal is None else GridPos(*goal)
    if not world.is_free(goal):
        raise WallError(f"goal {goal} is a wall cell")
    # moves are reversible, so distances from the goal equal distances to it
    dist = {goal: 0}
    queue = deque([goal])
    while queue:
        p = queue.popleft()
        for a in Action:
            q = _move(world.walls, p, a)
            if q not in dist:
                dist[q] = dist[p] + 1
                queue.append(q)
    return dist


def bfs_array(world: FourRoomsWorld, goal=None) -> np.ndarray:
    """``bfs_distances`` laid out along the state axis."""
    dist = bfs_distances(world, goal)
    return np.array([dist[p] for p in world.states], dtype=np.int64)


def room_of(pos) -> str | None:
    """Room containing ``pos`` or ``None`` for hallway cells.

    Only meaningful for free cells of the canonical layout.
    """
    x, y = pos
    if x < 6 and y < 6:
        return "top_left"
    if x > 6 and y < 7:
        return "top_right"
    if x < 6 and y > 6:
        return "bottom_left"
    if x > 6 and y > 7:
        return "bottom_right"
    return None


def goal_split(world: FourRoomsWorld) -> tuple[list[GridPos], list[GridPos]]:
    """All candidate training goals (three rooms) and test goals (fourth room)."""
    train = [p for p in world.states if room_of(p) in TRAIN_ROOMS]
    test = [p for p in world.states if room_of(p) in TEST_ROOMS]
    return train, test


def sample_goals(world: FourRoomsWorld, n: int, rng: np.random.Generator,
                 rooms=TRAIN_ROOMS) -> list[GridPos]:
    """Draw ``n`` distinct goals spread round-robin over ``rooms``."""
    by_room = {r: [p for p in world.states if room_of(p) == r] for r in rooms}
    if n > sum(len(v) for v in by_room.values()):
        raise ValueError(f"cannot draw {n} distinct goals from rooms {rooms}")
    order = {r: list(rng.permutation(len(cells))) for r, cells in by_room.items()}
    goals = []
    while len(goals) < n:
        for r in rooms:
            if order[r] and len(goals) < n:
                goals.append(by_room[r][order[r].pop()])
    return goals


def sample_start(world: FourRoomsWorld, rng: np.random.Generator) -> GridPos:
    """Uniform over free cells other than the goal."""
    i = int(rng.random() * (world.n_states - 1))
    if i >= world.goal_index:
        i += 1
    return world.states[i]
