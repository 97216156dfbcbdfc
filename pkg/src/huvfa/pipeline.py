"""Experiment stages on disk: Horde training, model builds, evaluation, plots.

Layout of an output directory::

    config.ini
    horde/manifest.json, horde/goal_XX_YY.hqt      trained per-goal tables
    reference/goal_XX_YY.hqt                       tables for unseen goals
    build/<mode>/manifest.json + <level>__<stream>.bin
    build/<mode>/factors_omega.cpf, factors_u.cpf, report.csv
    build/<mode>/history.csv                       rl modes only
    eval/<mode>-<goals>.csv, eval/compare-<goals>.csv
    plots/<mode>/...svg

Every random draw comes from ``substream(seed, <stage>, ...)``.
"""
from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import plots
from .config import ExperimentConfig, save_config
from .env import FourRoomsWorld, GridPos, bfs_distances, goal_split, load_layout, sample_goals
from .horde import (Horde, build_full_tensors, collect_history, replay_updates,
                    save_history)
from .models import (HierarchicalValues, TabularValues, build_rl, build_supervised,
                     build_uvfa_baseline, build_uvfa_rl, greedy_rollout, load_bundle,
                     save_bundle, value_policy_field)
from .reports import EVAL_COLUMNS, build_rows, eval_rows, write_csv
from .tabular import LearnerConfig, TabularHQ, load_table, save_table, train_goal
from .tensor import save_factors
from .utils import substream

BUILD_MODES = ("supervised", "rl", "uvfa-supervised", "uvfa-rl")
GOAL_SETS = ("trained", "unseen", "both")


class MissingArtifact(FileNotFoundError):
    pass


class NumericFailure(ArithmeticError):
    pass


def _map(fn, items, workers: int):
    """``map`` that fans out over processes; results keep the input order."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(*args) for args in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, *zip(*items)))


def _table_name(goal: GridPos) -> str:
    return f"goal_{goal.x:02d}_{goal.y:02d}.hqt"


def training_goals(world: FourRoomsWorld, cfg: ExperimentConfig) -> list[GridPos]:
    return sample_goals(world, cfg.horde.n_train_goals, substream(cfg.seed, "goals"))


def unseen_goals(world: FourRoomsWorld, cfg: ExperimentConfig) -> list[GridPos]:
    _, test = goal_split(world)
    rng = substream(cfg.seed, "unseen-goals")
    picks = rng.choice(len(test), size=cfg.eval.unseen_goals, replace=False)
    return [test[i] for i in sorted(picks)]


def eval_goals(world: FourRoomsWorld, cfg: ExperimentConfig, goal_set: str) -> list[GridPos]:
    if goal_set not in GOAL_SETS:
        raise ValueError(f"goal set must be one of {GOAL_SETS}")
    trained = training_goals(world, cfg)[: cfg.eval.trained_goals]
    unseen = unseen_goals(world, cfg)
    return {"trained": trained, "unseen": unseen, "both": trained + unseen}[goal_set]


def _train_one(world, goal, cfg: LearnerConfig, seed: int) -> TabularHQ:
    return train_goal(world, goal, cfg, substream(seed, "learner", goal.x, goal.y))


def _write_manifest(path: Path, payload: dict) -> None:
    payload = dict(payload, created=time.strftime("%Y-%m-%dT%H:%M:%S"))
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def train_horde(cfg: ExperimentConfig, out, workers: int = 1) -> Horde:
    """Train one learner per training goal and persist the tables."""
    out = Path(out)
    world = load_layout()
    goals = training_goals(world, cfg)
    lc = cfg.learner_config()
    learners = _map(_train_one, [(world, g, lc, cfg.seed) for g in goals], workers)
    horde_dir = out / "horde"
    horde_dir.mkdir(parents=True, exist_ok=True)
    save_config(out / "config.ini", cfg)
    for g, learner in zip(goals, learners):
        save_table(horde_dir / _table_name(g), learner, lc.gamma)
    _write_manifest(horde_dir / "manifest.json", {
        "goals": [list(g) for g in goals],
        "files": [_table_name(g) for g in goals],
        "gamma": lc.gamma,
        "seed": cfg.seed,
    })
    return Horde(goals, learners)


def load_horde(out, world: FourRoomsWorld | None = None) -> Horde:
    world = load_layout() if world is None else world
    manifest = Path(out) / "horde" / "manifest.json"
    if not manifest.exists():
        raise MissingArtifact(f"no trained Horde under {out}; run train-horde first")
    meta = json.loads(manifest.read_text())
    goals = [GridPos(*g) for g in meta["goals"]]
    learners = []
    for g, name in zip(goals, meta["files"]):
        path = manifest.parent / name
        if not path.exists():
            raise MissingArtifact(f"missing Q-table {path}")
        learners.append(load_table(path, world)[0])
    return Horde(goals, learners)


def reference_tables(cfg: ExperimentConfig, out, goals, workers: int = 1) -> Horde:
    """Ground-truth learners for goals outside the Horde, cached on disk."""
    world = load_layout()
    ref = Path(out) / "reference"
    ref.mkdir(parents=True, exist_ok=True)
    goals = [GridPos(*g) for g in goals]
    missing = [g for g in goals if not (ref / _table_name(g)).exists()]
    lc = cfg.learner_config()
    for g, learner in zip(missing, _map(_train_one, [(world, g, lc, cfg.seed) for g in missing],
                                        workers)):
        save_table(ref / _table_name(g), learner, lc.gamma)
    return Horde(goals, [load_table(ref / _table_name(g), world)[0] for g in goals])


def ground_truth(cfg: ExperimentConfig, out, goals, workers: int = 1) -> TabularValues:
    horde = load_horde(out)
    known = dict(zip(horde.goals, horde.learners))
    extra = [g for g in map(GridPos._make, goals) if g not in known]
    if extra:
        ref = reference_tables(cfg, out, extra, workers)
        known.update(zip(ref.goals, ref.learners))
    return TabularValues(Horde(list(known), list(known.values())))


def _check_finite(model: HierarchicalValues) -> None:
    for level in (model.omega, model.u):
        if not np.isfinite(level.reconstruction_error_):
            raise NumericFailure("decomposition produced a non-finite error")
        for stream, net in level.nets_.items():
            params = [*net.coefs_, *net.intercepts_]
            if not all(np.all(np.isfinite(p)) for p in params):
                raise NumericFailure(f"stream network {stream!r} diverged")


def build(cfg: ExperimentConfig, out, mode: str) -> HierarchicalValues:
    """Build one model family from the persisted Horde and write its artifacts."""
    if mode not in BUILD_MODES:
        raise ValueError(f"mode must be one of {BUILD_MODES}")
    out = Path(out)
    world = load_layout()
    horde = load_horde(out, world)
    tc = cfg.train_config()
    d = cfg.decomposition
    kw = dict(rank=d.rank, cfg=tc, max_iters=d.max_iters, tol=d.tol, ridge=d.ridge)
    dest = out / "build" / mode
    dest.mkdir(parents=True, exist_ok=True)
    if mode in ("supervised", "uvfa-supervised"):
        fn = build_supervised if mode == "supervised" else build_uvfa_baseline
        model = fn(world, horde, **kw)
    else:
        history, replayed = rl_data(cfg, world, horde)
        save_history(dest / "history.csv", history)
        fn = build_rl if mode == "rl" else build_uvfa_rl
        model = fn(world, replayed, history, **kw)
    _check_finite(model)
    model.kind = mode
    for f in dest.glob("*.bin"):
        f.unlink()
    save_bundle(dest, model)
    save_factors(dest / "factors_omega.cpf", model.omega.cp_)
    save_factors(dest / "factors_u.cpf", model.u.cp_)
    series = {"omega_als_error": model.omega.cp_.errors, "u_als_error": model.u.cp_.errors}
    for level, est in (("omega", model.omega), ("u", model.u)):
        for stream, curve in est.loss_curves_.items():
            series[f"{level}_loss_{stream}"] = curve
    header, rows = build_rows(series)
    write_csv(dest / "report.csv", "build", header, rows)
    return model


def rl_data(cfg: ExperimentConfig, world: FourRoomsWorld, horde: Horde):
    """Collect the shared history and apply off-goal replay to a copy of the Horde."""
    lc = cfg.learner_config()
    history = collect_history(world, horde, cfg.horde.episodes_per_goal,
                              substream(cfg.seed, "history"), lc)
    if len(history) == 0:
        raise NumericFailure("collection produced an empty history")
    replayed = Horde(list(horde.goals), [l.copy() for l in horde.learners])
    replay_updates(history, replayed, cfg.horde.replay_updates, lc, substream(cfg.seed, "replay"))
    return history, replayed


def load_model(out, mode: str) -> HierarchicalValues:
    path = Path(out) / "build" / mode
    if not (path / "manifest.json").exists():
        raise MissingArtifact(f"no {mode} model under {out}; run build --mode {mode} first")
    return load_bundle(path)


def _rollouts(cfg: ExperimentConfig, model, world, goals):
    return [greedy_rollout(model, world, g, cfg.eval.episodes, cfg.eval.beta_eval,
                           substream(cfg.seed, "eval", g.x, g.y)) for g in goals]


def _bfs_means(world, reports):
    out = []
    for r in reports:
        dist = bfs_distances(world, r.goal)
        out.append(float(np.mean([dist[s] for s in r.starts])))
    return out


def evaluate(cfg: ExperimentConfig, out, mode: str, goal_set: str = "both") -> Path:
    world = load_layout()
    model = load_model(out, mode)
    goals = eval_goals(world, cfg, goal_set)
    reports = _rollouts(cfg, model, world, goals)
    rows = eval_rows(mode, reports, cfg.learner.gamma, _bfs_means(world, reports))
    return write_csv(Path(out) / "eval" / f"{mode}-{goal_set}.csv", "eval", EVAL_COLUMNS, rows)


def compare(cfg: ExperimentConfig, out, goal_set: str = "both", workers: int = 1) -> Path:
    """Ground truth and every built model on the same goals and starts."""
    world = load_layout()
    goals = eval_goals(world, cfg, goal_set)
    models = [("ground_truth", ground_truth(cfg, out, goals, workers))]
    for mode in BUILD_MODES:
        if (Path(out) / "build" / mode / "manifest.json").exists():
            models.append((mode, load_model(out, mode)))
    if len(models) == 1:
        raise MissingArtifact(f"no built models under {out}")
    rows = []
    for name, model in models:
        reports = _rollouts(cfg, model, world, goals)
        rows.extend(eval_rows(name, reports, cfg.learner.gamma, _bfs_means(world, reports)))
    return write_csv(Path(out) / "eval" / f"compare-{goal_set}.csv", "eval", EVAL_COLUMNS, rows)


def _field(model, world, goal):
    f = value_policy_field(model, world, goal)
    return [f[p][0] for p in world.states], [f[p][1] for p in world.states]


def plot(cfg: ExperimentConfig, out, mode: str, goal=None) -> list[Path]:
    """Heatmaps for truth and model, tensor re-creation images and option panels."""
    world = load_layout()
    model = load_model(out, mode)
    horde = load_horde(out, world)
    goal = horde.goals[0] if goal is None else GridPos(*goal)
    if not world.is_free(goal):
        raise ValueError(f"goal {goal} is not a free cell")
    truth = ground_truth(cfg, out, [goal])
    dest = Path(out) / "plots" / mode
    tag = f"{goal.x:02d}_{goal.y:02d}"
    written = []
    for name, src in (("truth", truth), ("model", model)):
        values, actions = _field(src, world, goal)
        svg = plots.heatmap_svg(world, values, actions, goal, f"{name} {tuple(goal)}")
        written.append(plots.write(dest / f"heatmap_{name}_{tag}.svg", svg))
    q_omega, q_u = build_full_tensors(world, horde)
    rec_omega = np.stack([model.omega_table(world, g) for g in horde.goals], axis=-1)
    rec_u = np.stack([model.u_table(world, g) for g in horde.goals], axis=-1)
    S = world.n_states
    for level, X, R in (("omega", q_omega, rec_omega), ("u", q_u, rec_u)):
        svg = plots.matrix_svg([("tensor", X.reshape(S, -1)), ("re-creation", R.reshape(S, -1))],
                               pixel=2.0 if level == "omega" else 1.0)
        written.append(plots.write(dest / f"matrix_{level}.svg", svg))
    svg = plots.option_panels_svg(world, model.omega_table(world, goal),
                                  model.u_table(world, goal), goal)
    written.append(plots.write(dest / f"options_{tag}.svg", svg))
    return written
