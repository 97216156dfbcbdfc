"""Plain SVG renderings of value functions, policies and tensors.

Every figure is a string of hand-written SVG so output is byte-stable and
needs no plotting backend.  Colours run from blue (low) to red (high).
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .env import Action, FourRoomsWorld, GridPos

CELL = 28
_ARROW_DIRS = {Action.UP: (0, -1), Action.DOWN: (0, 1),
               Action.LEFT: (-1, 0), Action.RIGHT: (1, 0)}


def intensity(values, lo=None, hi=None) -> np.ndarray:
    """Map values linearly onto ``[0, 1]``; a constant input maps to 0."""
    v = np.asarray(values, dtype=float)
    lo = float(np.min(v)) if lo is None else lo
    hi = float(np.max(v)) if hi is None else hi
    if hi <= lo:
        return np.zeros_like(v)
    return np.clip((v - lo) / (hi - lo), 0.0, 1.0)


def colour(t: float) -> str:
    r = int(round(40 + 215 * t))
    b = int(round(255 - 215 * t))
    g = int(round(60 + 60 * (1 - abs(2 * t - 1))))
    return f"#{r:02x}{g:02x}{b:02x}"


def _svg(width: float, height: float, body: list[str]) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:g}" '
            f'height="{height:g}" viewBox="0 0 {width:g} {height:g}">')
    return "\n".join([head, *body, "</svg>", ""])


def _arrow(cx: float, cy: float, action: int, size: float) -> str:
    dx, dy = _ARROW_DIRS[Action(action)]
    x0, y0 = cx - dx * size * 0.35, cy - dy * size * 0.35
    x1, y1 = cx + dx * size * 0.35, cy + dy * size * 0.35
    # arrow head: two short strokes back from the tip
    px, py = -dy, dx
    hx1, hy1 = x1 - dx * size * 0.18 + px * size * 0.15, y1 - dy * size * 0.18 + py * size * 0.15
    hx2, hy2 = x1 - dx * size * 0.18 - px * size * 0.15, y1 - dy * size * 0.18 - py * size * 0.15
    return (f'<path class="arrow" d="M{x0:.1f},{y0:.1f} L{x1:.1f},{y1:.1f} '
            f'M{hx1:.1f},{hy1:.1f} L{x1:.1f},{y1:.1f} L{hx2:.1f},{hy2:.1f}" '
            f'stroke="black" stroke-width="1.5" fill="none"/>')


def _grid(world: FourRoomsWorld, values, actions, goal, ox: float = 0.0, oy: float = 0.0,
          shade=None, title: str = "") -> list[str]:
    """Cells of one panel; with ``shade`` set, marked cells are highlighted instead of coloured."""
    body = []
    if title:
        body.append(f'<text x="{ox + 2:g}" y="{oy + 14:g}" font-size="12">{title}</text>')
        oy += 20
    t = None
    if values is not None:
        # the goal cell is terminal (value 0) and would flatten the scale
        v = np.asarray(values, dtype=float)
        keep = np.array([p != goal for p in world.states])
        t = intensity(v, float(v[keep].min()), float(v[keep].max())) if keep.any() else v * 0
        t = np.where(keep, t, 1.0)
    for y in range(world.height):
        for x in range(world.width):
            px, py = ox + x * CELL, oy + y * CELL
            pos = GridPos(x, y)
            if not world.is_free(pos):
                fill = "#333333"
            elif shade is not None:
                fill = "#f2c14e" if shade[world.index[pos]] else "#eeeeee"
            else:
                fill = colour(float(t[world.index[pos]]))
            body.append(f'<rect x="{px:g}" y="{py:g}" width="{CELL}" height="{CELL}" '
                        f'fill="{fill}" stroke="#999999" stroke-width="0.5"/>')
    if actions is not None:
        for i, pos in enumerate(world.states):
            if pos != goal:
                cx, cy = ox + (pos.x + 0.5) * CELL, oy + (pos.y + 0.5) * CELL
                body.append(_arrow(cx, cy, int(actions[i]), CELL))
    if goal is not None:
        gx, gy = ox + (goal.x + 0.5) * CELL, oy + (goal.y + 0.5) * CELL
        body.append(f'<circle class="goal" cx="{gx:g}" cy="{gy:g}" r="{CELL * 0.3:g}" '
                    f'fill="#22aa44" stroke="black"/>')
    return body


def heatmap_svg(world: FourRoomsWorld, values, actions, goal, title: str = "") -> str:
    """Greedy-option values as a heatmap with the greedy action in each cell."""
    goal = GridPos(*goal)
    body = _grid(world, values, actions, goal, title=title)
    h = world.height * CELL + (20 if title else 0)
    return _svg(world.width * CELL, h, body)


def option_panels_svg(world: FourRoomsWorld, q_omega, q_u, goal) -> str:
    """One panel per option: cells where the meta-policy picks it, plus its own policy."""
    goal = GridPos(*goal)
    q_omega, q_u = np.asarray(q_omega), np.asarray(q_u)
    chosen = q_omega.argmax(axis=1)
    n = q_omega.shape[1]
    panel_w = world.width * CELL + 10
    panel_h = world.height * CELL + 20
    body = []
    for o in range(n):
        ox = o * panel_w
        body.append(f'<g class="panel" id="option-{o}">')
        body.extend(_grid(world, None, q_u[:, o].argmax(axis=1), goal, ox, 0.0,
                          shade=chosen == o, title=f"option {o}"))
        body.append("</g>")
    return _svg(n * panel_w, panel_h, body)


def matrix_svg(panels: list[tuple[str, np.ndarray]], pixel: float = 2.0) -> str:
    """Matrices drawn side by side as intensity images on a shared colour scale."""
    mats = [np.asarray(m, dtype=float) for _, m in panels]
    lo = min(float(m.min()) for m in mats)
    hi = max(float(m.max()) for m in mats)
    body, ox = [], 0.0
    height = 0.0
    for (title, _), m in zip(panels, mats):
        rows, cols = m.shape
        t = intensity(m, lo, hi)
        body.append(f'<g class="matrix"><text x="{ox + 2:g}" y="14" font-size="12">{title}</text>')
        for i in range(rows):
            for j in range(cols):
                body.append(f'<rect x="{ox + j * pixel:g}" y="{20 + i * pixel:g}" '
                            f'width="{pixel:g}" height="{pixel:g}" fill="{colour(t[i, j])}"/>')
        body.append("</g>")
        ox += cols * pixel + 10
        height = max(height, 20 + rows * pixel)
    return _svg(ox, height, body)


def write(path, svg: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(svg)
    return path
