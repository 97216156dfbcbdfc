"""Tabular two-level options learner.

A :class:`TabularHQ` holds the option-value table ``q_omega[s, o]`` and the
intra-option table ``q_u[s, o, a]`` for a single goal.  Learning uses the
bootstrapped updates in their general termination-weighted form and in the
always-terminate (``beta = 1``) form, which reduces to per-level Q-learning.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .env import N_ACTIONS, FourRoomsWorld, GridPos, sample_start

N_OPTIONS = 4


@dataclass
class LearnerConfig:
    gamma: float = 0.99
    alpha: float = 0.1
    epsilon: float = 0.2
    beta_train: float = 1.0
    beta_eval: float = 0.5
    episodes: int = 500_000

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        for name in ("beta_train", "beta_eval"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.episodes < 0:
            raise ValueError("episodes must be non-negative")


@dataclass(frozen=True)
class Transition:
    s: GridPos
    o: int
    a: int
    r: int
    s_next: GridPos
    done: bool


@dataclass
class TabularHQ:
    q_omega: np.ndarray
    q_u: np.ndarray
    goal: GridPos
    states: tuple[GridPos, ...]

    def __post_init__(self):
        self.goal = GridPos(*self.goal)
        self._index = {p: i for i, p in enumerate(self.states)}
        n = len(self.states)
        if self.q_omega.shape[0] != n or self.q_u.shape[:2] != self.q_omega.shape:
            raise ValueError("table shapes disagree with the state enumeration")

    @classmethod
    def zeros(cls, world: FourRoomsWorld, goal=None,
              n_options: int = N_OPTIONS, n_actions: int = N_ACTIONS) -> "TabularHQ":
        goal = world.goal if goal is None else goal
        n = world.n_states
        return cls(np.zeros((n, n_options)), np.zeros((n, n_options, n_actions)),
                   goal, world.states)

    @property
    def n_options(self) -> int:
        return self.q_omega.shape[1]

    @property
    def n_actions(self) -> int:
        return self.q_u.shape[2]

    def state_index(self, pos) -> int:
        return self._index[GridPos(*pos)]

    def omega_table(self, goal=None) -> np.ndarray:
        return self.q_omega

    def u_table(self, goal=None) -> np.ndarray:
        return self.q_u

    def copy(self) -> "TabularHQ":
        return TabularHQ(self.q_omega.copy(), self.q_u.copy(), self.goal, self.states)


def q_omega_from_q_u(q_u_row, policy) -> float:
    """Expected intra-option value under an action distribution."""
    q_u_row = np.asarray(q_u_row, dtype=float)
    policy = np.asarray(policy, dtype=float)
    if q_u_row.shape != policy.shape:
        raise ValueError("value row and policy must have equal length")
    if abs(policy.sum() - 1.0) > 1e-9 or np.any(policy < 0):
        raise ValueError("policy is not a probability vector")
    return float(policy @ q_u_row)


def u_value(q_omega_row_next, o: int, beta: float) -> float:
    """Value of continuing option ``o`` on arrival, with termination prob ``beta``."""
    row = np.asarray(q_omega_row_next, dtype=float)
    return float((1.0 - beta) * row[o] + beta * row.max())


def _is_terminal(table: TabularHQ, t: Transition) -> bool:
    # step-cap truncation keeps the bootstrap; only reaching the goal ends the return
    return bool(t.done) and GridPos(*t.s_next) == table.goal


def bootstrap_q_omega(table: TabularHQ, t: Transition, cfg: LearnerConfig,
                      beta: float | None = None) -> float:
    beta = cfg.beta_train if beta is None else beta
    s, s2 = table.state_index(t.s), table.state_index(t.s_next)
    cont = 0.0
    if not _is_terminal(table, t):
        row = table.q_omega[s2]
        cont = (1.0 - beta) * row[t.o] + beta * row.max()
    new = cfg.alpha * (t.r + cfg.gamma * cont) + (1.0 - cfg.alpha) * table.q_omega[s, t.o]
    table.q_omega[s, t.o] = new
    return float(new)


def bootstrap_q_omega_beta1(table: TabularHQ, t: Transition, cfg: LearnerConfig) -> float:
    s, s2 = table.state_index(t.s), table.state_index(t.s_next)
    cont = 0.0 if _is_terminal(table, t) else table.q_omega[s2].max()
    new = cfg.alpha * (t.r + cfg.gamma * cont) + (1.0 - cfg.alpha) * table.q_omega[s, t.o]
    table.q_omega[s, t.o] = new
    return float(new)


def bootstrap_q_u(table: TabularHQ, t: Transition, cfg: LearnerConfig,
                  beta: float | None = None) -> float:
    beta = cfg.beta_train if beta is None else beta
    s, s2 = table.state_index(t.s), table.state_index(t.s_next)
    cont = 0.0
    if not _is_terminal(table, t):
        row = table.q_u[s2, t.o]
        cont = (1.0 - beta) * row[t.a] + beta * row.max()
    new = (cfg.alpha * (t.r + cfg.gamma * cont)
           + (1.0 - cfg.alpha) * table.q_u[s, t.o, t.a])
    table.q_u[s, t.o, t.a] = new
    return float(new)


def bootstrap_q_u_beta1(table: TabularHQ, t: Transition, cfg: LearnerConfig) -> float:
    s, s2 = table.state_index(t.s), table.state_index(t.s_next)
    cont = 0.0 if _is_terminal(table, t) else table.q_u[s2, t.o].max()
    new = (cfg.alpha * (t.r + cfg.gamma * cont)
           + (1.0 - cfg.alpha) * table.q_u[s, t.o, t.a])
    table.q_u[s, t.o, t.a] = new
    return float(new)


def egreedy(row, epsilon: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy index with uniform tie-breaking among maxima.

    Draws only through ``rng.random()``, in the same order as the compiled
    training kernel, so both consume one shared uniform stream.
    """
    values = row.tolist() if isinstance(row, np.ndarray) else list(row)
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.random() * len(values))
    best = max(values)
    ties = [i for i, v in enumerate(values) if v == best]
    if len(ties) == 1:
        return ties[0]
    return ties[int(rng.random() * len(ties))]


def select_option(table: TabularHQ, s, epsilon: float, rng: np.random.Generator) -> int:
    return egreedy(table.q_omega[table.state_index(s)], epsilon, rng)


def select_action(table: TabularHQ, s, o: int, epsilon: float,
                  rng: np.random.Generator) -> int:
    return egreedy(table.q_u[table.state_index(s), o], epsilon, rng)


def run_episode(world: FourRoomsWorld, table: TabularHQ, cfg: LearnerConfig,
                mode: str = "train", rng: np.random.Generator | None = None,
                start=None, learn: bool = True) -> tuple[int, list[Transition]]:
    """Roll out one call-and-return episode.

    In ``train`` mode every transition is applied through the ``beta = 1``
    updates and options terminate with ``cfg.beta_train``; ``eval`` mode is
    greedy, never updates, and terminates options with ``cfg.beta_eval``.
    ``learn=False`` keeps the train-mode behaviour policy but skips updates.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    if table.goal != world.goal:
        raise ValueError("table and world disagree on the goal")
    rng = np.random.default_rng() if rng is None else rng
    train = mode == "train"
    learn = train and learn
    eps = cfg.epsilon if train else 0.0
    beta = cfg.beta_train if train else cfg.beta_eval
    alpha, gamma = cfg.alpha, cfg.gamma
    qo, qu, nxt = table.q_omega, table.q_u, world.next_state
    states, goal = world.states, world.goal_index

    s = world.index[GridPos(*start)] if start is not None else world.index[sample_start(world, rng)]
    o = -1
    transitions = []
    steps = 0
    while steps < world.max_steps:
        if o < 0:
            o = egreedy(qo[s], eps, rng)
        a = egreedy(qu[s, o], eps, rng)
        s2 = int(nxt[s, a])
        steps += 1
        r = 1 if s2 == goal else 0
        done = r == 1 or steps >= world.max_steps
        if learn:
            # same arithmetic as bootstrap_q_omega_beta1 / bootstrap_q_u_beta1
            c_o = 0.0 if r else qo[s2].max()
            c_u = 0.0 if r else qu[s2, o].max()
            qo[s, o] = alpha * (r + gamma * c_o) + (1.0 - alpha) * qo[s, o]
            qu[s, o, a] = alpha * (r + gamma * c_u) + (1.0 - alpha) * qu[s, o, a]
        transitions.append(Transition(states[s], o, a, r, states[s2], done))
        if r:
            break
        if beta >= 1.0 or (beta > 0.0 and rng.random() < beta):
            o = -1
        s = s2
    return steps, transitions


def train_goal(world: FourRoomsWorld, goal, cfg: LearnerConfig,
               rng: np.random.Generator, chunk: int = 1 << 20) -> TabularHQ:
    """Train fresh tables for ``goal`` over ``cfg.episodes`` episodes.

    Equivalent to calling ``run_episode(..., "train", rng)`` repeatedly, but
    runs in compiled code on a pre-drawn uniform stream.
    """
    from ._kernels import UNIFORMS_PER_STEP, train_episodes

    world = world.with_goal(goal)
    table = TabularHQ.zeros(world)
    chunk = max(chunk, 2 * (1 + UNIFORMS_PER_STEP * world.max_steps))
    u = rng.random(chunk)
    pos = 0
    remaining = cfg.episodes
    while remaining > 0:
        done, pos = train_episodes(
            table.q_omega, table.q_u, world.next_state, world.goal_index, remaining,
            cfg.epsilon, cfg.beta_train, cfg.alpha, cfg.gamma, world.max_steps, u, pos)
        remaining -= done
        if remaining > 0:
            u = np.concatenate([u[pos:], rng.random(chunk)])
            pos = 0
    return table


def greedy_option_values(table: TabularHQ) -> np.ndarray:
    return table.q_omega.max(axis=1)


# Q-table file: little-endian header then row-major float64 payload
#   magic b"HQTB" | version u32 | n_states u32 | n_options u32 | n_actions u32
#   | goal_x i32 | goal_y i32 | gamma f64 | q_omega[S*O] | q_u[S*O*A]
_QT_MAGIC = b"HQTB"
_QT_HEADER = struct.Struct("<4sIIIIiid")


def save_table(path, table: TabularHQ, gamma: float) -> None:
    n, no, na = table.q_u.shape
    header = _QT_HEADER.pack(_QT_MAGIC, 1, n, no, na, table.goal.x, table.goal.y, gamma)
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(table.q_omega, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(table.q_u, dtype="<f8").tobytes())


def load_table(path, world: FourRoomsWorld) -> tuple[TabularHQ, float]:
    raw = Path(path).read_bytes()
    magic, version, n, no, na, gx, gy, gamma = _QT_HEADER.unpack_from(raw)
    if magic != _QT_MAGIC or version != 1:
        raise ValueError(f"{path}: not a Q-table file")
    if n != world.n_states:
        raise ValueError(f"{path}: {n} states, world has {world.n_states}")
    off = _QT_HEADER.size
    data = np.frombuffer(raw, dtype="<f8", offset=off).astype(float)
    if data.size != n * no + n * no * na:
        raise ValueError(f"{path}: truncated payload")
    qo = data[: n * no].reshape(n, no).copy()
    qu = data[n * no:].reshape(n, no, na).copy()
    return TabularHQ(qo, qu, GridPos(gx, gy), world.states), gamma
