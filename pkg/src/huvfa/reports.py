"""Versioned CSV reports.

The first line of every report is a schema tag ``# huvfa-<kind> v<version>``
followed by an ordinary CSV header row.

``eval`` columns
    model, goal_x, goal_y, episodes, mean_steps, sd_steps, success_rate,
    bfs_mean, mean_return.  One row per goal and model, then one aggregate
    row per model with ``goal_x = goal_y = "all"``: the mean of the per-goal
    means, the standard deviation over all pooled episodes and the mean
    success rate.  ``mean_return`` is the discounted return ``gamma**(steps-1)``
    of successful episodes (0 otherwise).

``build`` columns
    step, then one column per series: ``<level>_als_error`` for the
    decomposition trace and ``<level>_loss_<stream>`` for each regressor's
    per-epoch loss.  Shorter series leave trailing cells empty.
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

SCHEMAS = {"eval": 1, "build": 1}
EVAL_COLUMNS = ("model", "goal_x", "goal_y", "episodes", "mean_steps", "sd_steps",
                "success_rate", "bfs_mean", "mean_return")


def schema_line(kind: str) -> str:
    return f"# huvfa-{kind} v{SCHEMAS[kind]}"


def write_csv(path, kind: str, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        f.write(schema_line(kind) + "\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def read_csv(path) -> tuple[str, list[str], list[list[str]]]:
    with open(path, newline="") as f:
        tag = f.readline().strip()
        if not tag.startswith("# huvfa-"):
            raise ValueError(f"{path}: missing schema line")
        reader = csv.reader(f)
        header = next(reader)
        return tag, header, [row for row in reader]


def _fmt(x) -> str:
    return f"{x:.6g}" if isinstance(x, (float, np.floating)) else str(x)


def eval_rows(model: str, reports, gamma: float, bfs_means) -> list[list[str]]:
    rows = []
    for rep, bfs in zip(reports, bfs_means):
        steps = np.asarray(rep.steps, dtype=float)
        ret = np.where(rep.successes, gamma ** (steps - 1), 0.0)
        rows.append([model, rep.goal.x, rep.goal.y, rep.episodes, rep.mean_steps, rep.sd_steps,
                     rep.success_rate, bfs, float(ret.mean())])
    pooled = np.concatenate([np.asarray(r.steps, dtype=float) for r in reports])
    ok = np.concatenate([np.asarray(r.successes, dtype=bool) for r in reports])
    ret = np.where(ok, gamma ** (pooled - 1), 0.0)
    rows.append([model, "all", "all", len(pooled),
                 float(np.mean([r.mean_steps for r in reports])), float(np.std(pooled)),
                 float(np.mean([r.success_rate for r in reports])),
                 float(np.mean(bfs_means)), float(ret.mean())])
    return [[_fmt(v) for v in row] for row in rows]


def build_rows(series: dict[str, list[float]]) -> tuple[list[str], list[list[str]]]:
    names = list(series)
    n = max((len(v) for v in series.values()), default=0)
    rows = []
    for i in range(n):
        rows.append([str(i)] + [_fmt(float(series[k][i])) if i < len(series[k]) else ""
                                for k in names])
    return ["step", *names], rows
