"""Compiled inner loop for tabular training.

Mirrors ``tabular.run_episode`` in train mode draw for draw: both consume
uniforms in the same order, so for the same generator the tables come out
bitwise identical.
"""
import numpy as np
from numba import njit

UNIFORMS_PER_STEP = 5


@njit(cache=True)
def _egreedy(row, eps, u, pos):
    k = row.shape[0]
    if eps > 0.0:
        x = u[pos]
        pos += 1
        if x < eps:
            j = int(u[pos] * k)
            return j, pos + 1
    best = row[0]
    for i in range(1, k):
        if row[i] > best:
            best = row[i]
    count = 0
    first = 0
    for i in range(k):
        if row[i] == best:
            if count == 0:
                first = i
            count += 1
    if count == 1:
        return first, pos
    pick = int(u[pos] * count)
    pos += 1
    seen = 0
    for i in range(k):
        if row[i] == best:
            if seen == pick:
                return i, pos
            seen += 1
    return first, pos


@njit(cache=True)
def train_episodes(qo, qu, nxt, goal, n_episodes, eps, beta, alpha, gamma,
                   max_steps, u, pos):
    n = qo.shape[0]
    reserve = 1 + UNIFORMS_PER_STEP * max_steps
    finished = 0
    while finished < n_episodes and pos + reserve <= u.shape[0]:
        s = int(u[pos] * (n - 1))
        pos += 1
        if s >= goal:
            s += 1
        o = -1
        steps = 0
        while steps < max_steps:
            if o < 0:
                o, pos = _egreedy(qo[s], eps, u, pos)
            a, pos = _egreedy(qu[s, o], eps, u, pos)
            s2 = nxt[s, a]
            steps += 1
            if s2 == goal:
                qo[s, o] = alpha * (1.0 + gamma * 0.0) + (1.0 - alpha) * qo[s, o]
                qu[s, o, a] = alpha * (1.0 + gamma * 0.0) + (1.0 - alpha) * qu[s, o, a]
                break
            qo[s, o] = alpha * (0.0 + gamma * np.max(qo[s2])) + (1.0 - alpha) * qo[s, o]
            qu[s, o, a] = alpha * (0.0 + gamma * np.max(qu[s2, o])) + (1.0 - alpha) * qu[s, o, a]
            if beta >= 1.0:
                o = -1
            elif beta > 0.0:
                if u[pos] < beta:
                    o = -1
                pos += 1
            s = s2
        finished += 1
    return finished, pos
