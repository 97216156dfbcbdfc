"""A Horde of per-goal hierarchical value functions and its data tensors."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .env import FourRoomsWorld, GridPos
from .tabular import (LearnerConfig, TabularHQ, Transition, bootstrap_q_omega_beta1,
                      bootstrap_q_u_beta1, run_episode, train_goal)
from .utils import substream


@dataclass
class Horde:
    goals: list[GridPos]
    learners: list[TabularHQ]

    def __post_init__(self):
        self.goals = [GridPos(*g) for g in self.goals]
        if len(self.goals) != len(self.learners):
            raise ValueError("one learner per goal is required")
        for g, learner in zip(self.goals, self.learners):
            if learner.goal != g:
                raise ValueError(f"learner for {g} was trained on {learner.goal}")

    def __len__(self):
        return len(self.goals)

    @classmethod
    def empty(cls, world: FourRoomsWorld, goals) -> "Horde":
        return cls(list(goals), [TabularHQ.zeros(world, g) for g in goals])

    @classmethod
    def train(cls, world: FourRoomsWorld, goals, cfg: LearnerConfig, seed: int) -> "Horde":
        """Train one learner per goal, each on its own named sub-seed."""
        learners = [train_goal(world, g, cfg, substream(seed, "learner", g.x, g.y))
                    for g in map(GridPos._make, goals)]
        return cls(list(goals), learners)


@dataclass
class TransitionHistory:
    transitions: list[Transition] = field(default_factory=list)
    episode_ids: list[int] = field(default_factory=list)
    steps: list[int] = field(default_factory=list)

    def __len__(self):
        return len(self.transitions)

    @property
    def n_episodes(self) -> int:
        return len(set(self.episode_ids))

    def append_episode(self, transitions) -> None:
        eid = self.n_episodes
        for t, tr in enumerate(transitions):
            self.transitions.append(tr)
            self.episode_ids.append(eid)
            self.steps.append(t)

    def episode_lengths(self) -> list[int]:
        return np.bincount(self.episode_ids).tolist() if self.episode_ids else []

    def arrays(self, world: FourRoomsWorld) -> dict[str, np.ndarray]:
        """Index-encoded columns: s, o, a, r, s_next (state indices), done."""
        idx = world.index
        cols = {
            "s": [idx[t.s] for t in self.transitions],
            "o": [t.o for t in self.transitions],
            "a": [t.a for t in self.transitions],
            "r": [t.r for t in self.transitions],
            "s_next": [idx[t.s_next] for t in self.transitions],
            "done": [t.done for t in self.transitions],
        }
        return {k: np.asarray(v, dtype=bool if k == "done" else np.int64)
                for k, v in cols.items()}


HISTORY_COLUMNS = ("episode_id", "t", "s_x", "s_y", "o", "a", "r",
                   "s_next_x", "s_next_y", "done")


def save_history(path, history: TransitionHistory) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(HISTORY_COLUMNS)
        for eid, t, tr in zip(history.episode_ids, history.steps, history.transitions):
            w.writerow([eid, t, tr.s.x, tr.s.y, tr.o, tr.a, tr.r,
                        tr.s_next.x, tr.s_next.y, int(tr.done)])


def load_history(path) -> TransitionHistory:
    history = TransitionHistory()
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = tuple(next(reader))
        if header != HISTORY_COLUMNS:
            raise ValueError(f"{path}: unexpected history header {header}")
        for row in reader:
            eid, t, sx, sy, o, a, r, nx, ny, done = map(int, row)
            history.transitions.append(
                Transition(GridPos(sx, sy), o, a, r, GridPos(nx, ny), bool(done)))
            history.episode_ids.append(eid)
            history.steps.append(t)
    return history


def collect_history(world: FourRoomsWorld, horde: Horde, episodes_per_goal: int,
                    rng: np.random.Generator, cfg: LearnerConfig | None = None
                    ) -> TransitionHistory:
    """Roll out each member on its own goal with its own epsilon-greedy policy.

    Collection never updates the tables; learning from the history happens
    in :func:`replay_updates`.
    """
    cfg = LearnerConfig() if cfg is None else cfg
    history = TransitionHistory()
    for g, learner in zip(horde.goals, horde.learners):
        w = world.with_goal(g)
        for _ in range(episodes_per_goal):
            _, transitions = run_episode(w, learner, cfg, "train", rng, learn=False)
            history.append_episode(transitions)
    return history


def relabel(t: Transition, goal: GridPos) -> Transition:
    reached = t.s_next == goal
    return replace(t, r=int(reached), done=reached)


def replay_updates(history: TransitionHistory, horde: Horde, b2: int,
                   cfg: LearnerConfig, rng: np.random.Generator) -> Horde:
    """Off-goal replay: ``b2`` random transitions, each applied to every goal."""
    if len(history) == 0:
        raise ValueError("cannot replay an empty history")
    picks = rng.integers(len(history), size=b2)
    for i in picks:
        t = history.transitions[i]
        for g, learner in zip(horde.goals, horde.learners):
            tg = relabel(t, g)
            bootstrap_q_omega_beta1(learner, tg, cfg)
            bootstrap_q_u_beta1(learner, tg, cfg)
    return horde


def build_full_tensors(world: FourRoomsWorld, horde: Horde) -> tuple[np.ndarray, np.ndarray]:
    """Stack the Horde's tables into ``(S, O, G)`` and ``(S, O, A, G)`` tensors."""
    for learner in horde.learners:
        if learner.states != world.states:
            raise ValueError("learner state enumeration differs from the world's")
    q_omega = np.stack([l.q_omega for l in horde.learners], axis=-1)
    q_u = np.stack([l.q_u for l in horde.learners], axis=-1)
    return q_omega, q_u


def build_data_matrices(history: TransitionHistory, horde: Horde
                        ) -> tuple[np.ndarray, np.ndarray]:
    """History-indexed data: ``M[t, g] = Q_omega_g(s_t, o_t)`` and
    ``N[t, g, o] = Q_u_g(s_t, o, a_t)`` for every option ``o``."""
    learners = horde.learners
    T, G = len(history), len(learners)
    O = learners[0].n_options if learners else 0
    M = np.empty((T, G))
    N = np.empty((T, G, O))
    for t, tr in enumerate(history.transitions):
        for g, learner in enumerate(learners):
            s = learner.state_index(tr.s)
            M[t, g] = learner.q_omega[s, tr.o]
            N[t, g, :] = learner.q_u[s, :, tr.a]
    return M, N
