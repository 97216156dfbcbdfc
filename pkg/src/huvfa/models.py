"""Multi-stream universal value function approximators.

A value level is a tensor of values whose axes are *streams*: ``"goal"``
plus features such as ``"state"``, ``"option"``, ``"action"`` or joint keys
like ``"state+option"``.  Fitting a level decomposes the tensor with CP-ALS
and regresses one :class:`~huvfa.nets.StreamNet` per stream onto its factor
rows; predictions recombine the stream embeddings with the product-sum
combiner :func:`h_combine`.

The hierarchical model keeps every stream separate (three streams for the
option level, four for the intra-option level).  The flat baseline joins
state, option and action into one row stream per level.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .env import FourRoomsWorld, GridPos, bfs_distances, sample_start
from .horde import Horde, TransitionHistory, build_data_matrices, build_full_tensors
from .nets import FeatureCodec, StreamNet, TrainConfig, load_weights, save_weights, sgd
from .tabular import egreedy
from .tensor import balance_scales, cp_als

TABLE_AXES = {"state": "s", "option": "o", "action": "a"}


def h_combine(embeddings) -> float:
    """Product-sum ``sum_r prod_k e_k[r]`` of equal-length embeddings."""
    embeddings = [np.asarray(e, dtype=float) for e in embeddings]
    if len({e.shape for e in embeddings}) != 1:
        raise ValueError("embeddings must share one length")
    return float(np.prod(np.stack(embeddings), axis=0).sum())


def _batch_size(stream: str, cfg: TrainConfig) -> int:
    parts = set(stream.split("+"))
    return cfg.batch_state_goal if parts & {"state", "goal"} else cfg.batch_option_action


def _group_rows(keys, rows):
    """Unique keys (first-seen order) and the mean factor row of each."""
    index: dict = {}
    sums, counts = [], []
    for k, r in zip(keys, rows):
        k = tuple(k) if isinstance(k, (list, tuple)) else k
        if k in index:
            i = index[k]
            sums[i] = sums[i] + r
            counts[i] += 1
        else:
            index[k] = len(sums)
            sums.append(np.array(r, dtype=float))
            counts.append(1)
    uniq = list(index)
    return uniq, np.array([s / c for s, c in zip(sums, counts)])


class MultiStreamUVFA(BaseEstimator):
    """One value level: CP decomposition plus a regressor per stream.

    Parameters
    ----------
    rank : int
        Embedding dimension shared by every stream.
    hidden, lr, epochs : int, float, int
        Stream regressor width, SGD step and number of epochs.
    batch_state_goal, batch_option_action : int
        Minibatch sizes for streams that contain a state or goal, and for
        pure option/action streams.
    max_iters, tol, ridge : int, float, float
        CP-ALS budget, stopping threshold and diagonal load.
    random_state : int
        Seed for the decomposition and every regressor.
    """

    def __init__(self, rank=50, hidden=128, lr=0.05, epochs=2000, batch_state_goal=16,
                 batch_option_action=2, max_iters=500, tol=1e-6, ridge=1e-9,
                 random_state=0):
        self.rank = rank
        self.hidden = hidden
        self.lr = lr
        self.epochs = epochs
        self.batch_state_goal = batch_state_goal
        self.batch_option_action = batch_option_action
        self.max_iters = max_iters
        self.tol = tol
        self.ridge = ridge
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        return TrainConfig(self.lr, self.batch_state_goal, self.batch_option_action,
                           self.epochs, self.random_state)

    def fit(self, X, streams, keys, codec: FeatureCodec | None = None):
        """Decompose ``X`` and regress each stream's embedding network.

        ``streams[d]`` names axis ``d`` of ``X`` and ``keys[d]`` lists the
        raw key (cell, option index, tuple for joint streams) of every
        position along that axis.  Repeated keys share one regression
        target: the mean of their factor rows.
        """
        X = np.asarray(X, dtype=float)
        if len(streams) != X.ndim or len(keys) != X.ndim:
            raise ValueError("one stream name and key list per tensor axis is required")
        for d, k in enumerate(keys):
            if len(k) != X.shape[d]:
                raise ValueError(f"axis {d}: {len(k)} keys for length {X.shape[d]}")
        if "goal" not in streams:
            raise ValueError("a goal stream is required")
        self.codec_ = FeatureCodec() if codec is None else codec
        self.streams_ = list(streams)
        self.cp_ = cp_als(X, self.rank, self.max_iters, self.tol, self.random_state, self.ridge)
        self.reconstruction_error_ = self.cp_.errors[-1]
        balanced = balance_scales(self.cp_)
        cfg = self._train_config()
        self.nets_, self.loss_curves_, self.targets_ = {}, {}, {}
        for d, (stream, axis_keys) in enumerate(zip(streams, keys)):
            uniq, rows = _group_rows(axis_keys, balanced.factors[d])
            self.targets_[stream] = dict(zip(uniq, rows))
            feats = self.codec_.encode(stream, uniq)
            net = StreamNet(hidden=self.hidden, lr=self.lr, batch_size=_batch_size(stream, cfg),
                            epochs=self.epochs, random_state=self.random_state)
            rng = np.random.default_rng([self.random_state, d])
            net.initialize(feats.shape[1], rows.shape[1], rng)
            net.loss_curve_ = sgd(net, feats, rows, net.lr, net.batch_size, net.epochs, rng)
            self.nets_[stream] = net
            self.loss_curves_[stream] = net.loss_curve_
        return self

    @property
    def table_axes(self) -> tuple[str, ...]:
        parts = [p for s in self.streams_ if s != "goal" for p in s.split("+")]
        return tuple(a for a in TABLE_AXES if a in parts)

    def embed(self, stream: str, keys, use_factors: bool = False) -> np.ndarray:
        check_is_fitted(self, "nets_")
        if use_factors:
            table = self.targets_[stream]
            return np.array([table[tuple(k) if isinstance(k, (list, tuple)) else k]
                             for k in keys])
        return self.nets_[stream].predict(self.codec_.encode(stream, keys))

    def table(self, world: FourRoomsWorld, goal, use_factors: bool = False) -> np.ndarray:
        """Values over every (state, option[, action]) for one goal."""
        domains = {"state": list(world.states), "option": list(range(self.codec_.n_options)),
                   "action": list(range(self.codec_.n_actions))}
        goal = GridPos(*goal)
        operands, subs = [], []
        for stream in self.streams_:
            if stream == "goal":
                operands.append(self.embed("goal", [goal], use_factors)[0])
                subs.append("z")
                continue
            parts = stream.split("+")
            grid = list(itertools.product(*(domains[p] for p in parts)))
            keys = grid if len(parts) > 1 else [g[0] for g in grid]
            emb = self.embed(stream, keys, use_factors)
            operands.append(emb.reshape(*(len(domains[p]) for p in parts), -1))
            subs.append("".join(TABLE_AXES[p] for p in parts) + "z")
        out = "".join(TABLE_AXES[a] for a in self.table_axes)
        return np.einsum(",".join(subs) + "->" + out, *operands)

    def value(self, **keys) -> float:
        """``h_combine`` of the stream embeddings for a single entry."""
        embs = []
        for stream in self.streams_:
            parts = stream.split("+")
            key = tuple(keys[p] for p in parts)
            key = key[0] if len(parts) == 1 else key
            embs.append(self.embed(stream, [key])[0])
        return h_combine(embs)

    def scale_stream(self, stream: str, c: float) -> None:
        """Multiply one stream's outputs by ``c`` (last layer rescaled)."""
        net = self.nets_[stream]
        net.coefs_[1] = net.coefs_[1] * c
        net.intercepts_[1] = net.intercepts_[1] * c


@dataclass
class HierarchicalValues:
    """An option-level and an intra-option-level model used together."""

    omega: MultiStreamUVFA
    u: MultiStreamUVFA
    kind: str = "huvfa"
    report: dict = field(default_factory=dict)

    def omega_table(self, world, goal) -> np.ndarray:
        return self.omega.table(world, goal)

    def u_table(self, world, goal) -> np.ndarray:
        return self.u.table(world, goal)


@dataclass
class TabularValues:
    """Ground-truth lookup into a trained Horde, same interface as the models."""

    horde: Horde
    kind: str = "ground_truth"

    def _learner(self, goal):
        goal = GridPos(*goal)
        for g, learner in zip(self.horde.goals, self.horde.learners):
            if g == goal:
                return learner
        raise KeyError(f"goal {goal} is not in the Horde")

    def omega_table(self, world, goal) -> np.ndarray:
        return self._learner(goal).q_omega

    def u_table(self, world, goal) -> np.ndarray:
        return self._learner(goal).q_u


def q_omega_hat(model: HierarchicalValues, s, g, o) -> float:
    return model.omega.value(state=GridPos(*s), goal=GridPos(*g), option=o)


def q_u_hat(model: HierarchicalValues, s, g, o, a) -> float:
    return model.u.value(state=GridPos(*s), goal=GridPos(*g), option=o, action=a)


def _level(cfg: TrainConfig, rank: int, max_iters: int, tol: float,
           ridge: float) -> MultiStreamUVFA:
    return MultiStreamUVFA(rank=rank, lr=cfg.lr, epochs=cfg.epochs,
                           batch_state_goal=cfg.batch_state_goal,
                           batch_option_action=cfg.batch_option_action,
                           max_iters=max_iters, tol=tol, ridge=ridge, random_state=cfg.seed)


def build_supervised(world: FourRoomsWorld, horde: Horde, rank: int = 50,
                     cfg: TrainConfig | None = None, max_iters: int = 500,
                     tol: float = 1e-6, ridge: float = 1e-9) -> HierarchicalValues:
    """Three-stream option level and four-stream intra-option level from full tensors."""
    cfg = TrainConfig() if cfg is None else cfg
    q_omega, q_u = build_full_tensors(world, horde)
    states, goals = list(world.states), list(horde.goals)
    opts, acts = list(range(q_omega.shape[1])), list(range(q_u.shape[2]))
    omega = _level(cfg, rank, max_iters, tol, ridge).fit(
        q_omega, ["state", "option", "goal"], [states, opts, goals])
    u = _level(cfg, rank, max_iters, tol, ridge).fit(
        q_u, ["state", "option", "action", "goal"], [states, opts, acts, goals])
    return HierarchicalValues(omega, u, "huvfa-supervised", _report(omega, u))


def build_uvfa_baseline(world: FourRoomsWorld, horde: Horde, rank: int = 50,
                        cfg: TrainConfig | None = None, max_iters: int = 500,
                        tol: float = 1e-6, ridge: float = 1e-9) -> HierarchicalValues:
    """Two-stream baseline from the same tensors: ``(s,o) x g`` and ``(s,o,a) x g``."""
    cfg = TrainConfig() if cfg is None else cfg
    q_omega, q_u = build_full_tensors(world, horde)
    S, O, A, G = q_u.shape
    so = list(itertools.product(world.states, range(O)))
    soa = list(itertools.product(world.states, range(O), range(A)))
    goals = list(horde.goals)
    omega = _level(cfg, rank, max_iters, tol, ridge).fit(
        q_omega.reshape(S * O, G), ["state+option", "goal"], [so, goals])
    u = _level(cfg, rank, max_iters, tol, ridge).fit(
        q_u.reshape(S * O * A, G), ["state+option+action", "goal"], [soa, goals])
    return HierarchicalValues(omega, u, "uvfa-supervised", _report(omega, u))


def build_rl(world: FourRoomsWorld, horde: Horde, history: TransitionHistory,
             rank: int = 50, cfg: TrainConfig | None = None, max_iters: int = 500,
             tol: float = 1e-6, ridge: float = 1e-9) -> HierarchicalValues:
    """H-UVFA from history-indexed data only.

    The option level factorises the ``|H| x G`` matrix into a joint
    (state, option) row stream and a goal stream; the intra-option level
    factorises the ``|H| x G x O`` tensor into a joint (state, action) row
    stream, a goal stream and an option stream.
    """
    if len(history) == 0:
        raise ValueError("empty transition history")
    cfg = TrainConfig() if cfg is None else cfg
    M, N = build_data_matrices(history, horde)
    trs = history.transitions
    goals = list(horde.goals)
    omega = _level(cfg, rank, max_iters, tol, ridge).fit(
        M, ["state+option", "goal"], [[(t.s, t.o) for t in trs], goals])
    u = _level(cfg, rank, max_iters, tol, ridge).fit(
        N, ["state+action", "goal", "option"],
        [[(t.s, t.a) for t in trs], goals, list(range(N.shape[2]))])
    return HierarchicalValues(omega, u, "huvfa-rl", _report(omega, u))


def build_uvfa_rl(world: FourRoomsWorld, horde: Horde, history: TransitionHistory,
                  rank: int = 50, cfg: TrainConfig | None = None, max_iters: int = 500,
                  tol: float = 1e-6, ridge: float = 1e-9) -> HierarchicalValues:
    """Flat baseline on the history: ``M`` as above and ``Q_u(s_t, o_t, a_t)`` per goal."""
    if len(history) == 0:
        raise ValueError("empty transition history")
    cfg = TrainConfig() if cfg is None else cfg
    M, N = build_data_matrices(history, horde)
    trs = history.transitions
    N_flat = N[np.arange(len(trs)), :, [t.o for t in trs]]
    goals = list(horde.goals)
    omega = _level(cfg, rank, max_iters, tol, ridge).fit(
        M, ["state+option", "goal"], [[(t.s, t.o) for t in trs], goals])
    u = _level(cfg, rank, max_iters, tol, ridge).fit(
        N_flat, ["state+option+action", "goal"], [[(t.s, t.o, t.a) for t in trs], goals])
    return HierarchicalValues(omega, u, "uvfa-rl", _report(omega, u))


def _report(omega: MultiStreamUVFA, u: MultiStreamUVFA) -> dict:
    return {
        "omega_errors": list(omega.cp_.errors),
        "u_errors": list(u.cp_.errors),
        "omega_loss": {k: list(v) for k, v in omega.loss_curves_.items()},
        "u_loss": {k: list(v) for k, v in u.loss_curves_.items()},
    }


@dataclass
class EvalReport:
    goal: GridPos
    steps: list[int]
    successes: list[bool]
    starts: list[GridPos] = field(default_factory=list)

    @property
    def episodes(self) -> int:
        return len(self.steps)

    @property
    def mean_steps(self) -> float:
        return float(np.mean(self.steps))

    @property
    def sd_steps(self) -> float:
        return float(np.std(self.steps))

    @property
    def success_rate(self) -> float:
        return float(np.mean(self.successes))


def greedy_rollout(models, world: FourRoomsWorld, goal, episodes: int = 10,
                   beta_eval: float = 0.5, rng: np.random.Generator | None = None,
                   starts=None) -> EvalReport:
    """Call-and-return greedy episodes driven by ``models``' value tables.

    Start cells are drawn up front so that two models evaluated with equally
    seeded generators face the same starts.
    """
    rng = np.random.default_rng() if rng is None else rng
    world = world.with_goal(goal)
    q_omega = np.asarray(models.omega_table(world, world.goal))
    q_u = np.asarray(models.u_table(world, world.goal))
    if starts is None:
        starts = [sample_start(world, rng) for _ in range(episodes)]
    nxt, g = world.next_state, world.goal_index
    steps_out, ok = [], []
    for start in starts:
        s = world.index[GridPos(*start)]
        o, steps = -1, 0
        while steps < world.max_steps:
            if o < 0:
                o = egreedy(q_omega[s], 0.0, rng)
            a = egreedy(q_u[s, o], 0.0, rng)
            s = int(nxt[s, a])
            steps += 1
            if s == g:
                break
            if beta_eval >= 1.0 or (beta_eval > 0.0 and rng.random() < beta_eval):
                o = -1
        steps_out.append(steps)
        ok.append(s == g)
    return EvalReport(world.goal, steps_out, ok, [GridPos(*p) for p in starts])


def value_policy_field(models, world: FourRoomsWorld, goal) -> dict[GridPos, tuple[float, int]]:
    """Greedy-option value and greedy action in every free cell."""
    q_omega = np.asarray(models.omega_table(world, goal))
    q_u = np.asarray(models.u_table(world, goal))
    o = q_omega.argmax(axis=1)
    idx = np.arange(len(o))
    values = q_omega[idx, o]
    actions = q_u[idx, o].argmax(axis=1)
    return {p: (float(values[i]), int(actions[i])) for i, p in enumerate(world.states)}


def bfs_lower_bound(world: FourRoomsWorld, report: EvalReport) -> float:
    dist = bfs_distances(world, report.goal)
    return float(np.mean([dist[s] for s in report.starts]))


# Model bundle: <dir>/manifest.json plus one weight file per stream net,
# named <level>__<stream>.bin (``+`` in joint stream names becomes ``-``).
BUNDLE_VERSION = 1


def _stream_file(level: str, stream: str) -> str:
    return f"{level}__{stream.replace('+', '-')}.bin"


def save_bundle(path, model: HierarchicalValues) -> list[Path]:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    written = []
    manifest = {"version": BUNDLE_VERSION, "kind": model.kind, "levels": {}}
    for level, est in (("omega", model.omega), ("u", model.u)):
        manifest["levels"][level] = {
            "rank": est.rank,
            "streams": est.streams_,
            "codec_version": est.codec_.version,
            "files": {s: _stream_file(level, s) for s in est.streams_},
            "params": est.get_params(),
        }
        for s in est.streams_:
            f = path / _stream_file(level, s)
            save_weights(f, est.nets_[s])
            written.append(f)
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return written


def load_bundle(path) -> HierarchicalValues:
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    if manifest.get("version") != BUNDLE_VERSION:
        raise ValueError(f"{path}: unsupported bundle version")
    levels = {}
    for level, spec in manifest["levels"].items():
        est = MultiStreamUVFA(**spec["params"])
        est.codec_ = FeatureCodec()
        est.streams_ = list(spec["streams"])
        est.nets_ = {s: load_weights(path / f) for s, f in spec["files"].items()}
        levels[level] = est
    return HierarchicalValues(levels["omega"], levels["u"], manifest["kind"])
