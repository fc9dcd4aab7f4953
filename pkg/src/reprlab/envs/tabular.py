"""Exact solutions of the grid tasks' tabular form.

``solve`` does backward induction over the episode's decision limit
(undiscounted, the quantity evaluation scores measure); ``solve_discounted``
runs value iteration on the discounted, time-unlimited problem that a
Q-learner with the same discount factor targets.

The tabular state keeps only the latent components a task's rewards and
dynamics depend on: agent and object cells plus ``aux`` for tasks with a
moving object, agent cell plus item mask for gathering tasks.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from reprlab.envs.gridworld import NOOP, GridEnv, Latent, TaskSpec, advance


def _dims(spec: TaskSpec) -> list[tuple[str, int]]:
    g = spec.grid_size
    dims = [("ay", g), ("ax", g)]
    if spec.dynamics != "none":
        dims += [("oy", g), ("ox", g), ("aux", 4 * spec.object_period if spec.dynamics == "bounce" else 2)]
    if spec.reward_rule == "gather":
        dims += [("items", 1 << spec.n_items)]
    return dims


@dataclass
class TabularSolution:
    spec: TaskSpec
    dims: list[tuple[str, int]]
    policy: np.ndarray      # (horizon, S) int8 per decision index; one row if stationary
    q0: np.ndarray          # (S, A) optimal Q at the first decision
    v0: np.ndarray          # (S,)

    def index(self, lat: Latent) -> int:
        idx = 0
        for name, size in self.dims:
            idx = idx * size + getattr(lat, name)
        return idx

    def action(self, lat: Latent, t: int) -> int:
        return int(self.policy[min(t, len(self.policy) - 1), self.index(lat)])

    def value(self, lat: Latent) -> float:
        return float(self.v0[self.index(lat)])

    def optimal_actions(self, lat: Latent, tol: float = 1e-9) -> set[int]:
        q = self.q0[self.index(lat)]
        return {int(a) for a in np.flatnonzero(q >= q.max() - tol)}


def _transitions(spec: TaskSpec):
    """Next-state index, reward and terminal flag for every (state, action)."""
    dims = _dims(spec)
    sizes = [s for _, s in dims]
    grids = np.meshgrid(*[np.arange(s) for s in sizes], indexing="ij")
    cols = {name: grid.reshape(-1) for (name, _), grid in zip(dims, grids)}
    n = cols["ay"].size
    zeros = np.zeros(n, dtype=np.int64)
    lat = [cols.get(k, zeros) for k in ("ay", "ax", "oy", "ox", "aux", "items")]
    n_act = 5
    nxt = np.empty((n, n_act), dtype=np.int64)
    rew = np.empty((n, n_act))
    term = np.empty((n, n_act), dtype=bool)
    for a in range(n_act):
        out = advance(spec, *lat, a)
        named = dict(zip(("ay", "ax", "oy", "ox", "aux", "items"), out[:6]))
        idx = np.zeros(n, dtype=np.int64)
        for name, size in dims:
            idx = idx * size + np.broadcast_to(named[name], (n,))
        nxt[:, a] = idx
        rew[:, a] = np.broadcast_to(out[6], (n,))
        term[:, a] = np.broadcast_to(out[7], (n,))
    dead = np.zeros(n, dtype=bool)
    if spec.reward_rule == "gather":
        dead = cols["items"] == 0
    return dims, nxt, rew, term, dead


def solve(spec: TaskSpec) -> TabularSolution:
    """Backward induction over ``spec.step_limit`` decisions (undiscounted)."""
    dims, nxt, rew, term, dead = _transitions(spec)
    horizon = spec.step_limit
    policy = np.empty((horizon, len(dead)), dtype=np.int8)
    v = np.zeros(len(dead))
    q = None
    for t in reversed(range(horizon)):
        q = rew + np.where(term, 0.0, v[nxt])
        q[dead] = 0.0
        pol = np.argmax(q, axis=1)
        pol[dead] = NOOP
        policy[t] = pol
        v = q.max(axis=1)
    return TabularSolution(spec, dims, policy, q, v)


def solve_discounted(spec: TaskSpec, gamma: float, tol: float = 1e-12) -> TabularSolution:
    """Q* of the discounted problem without a time limit, by value iteration.

    The greedy policy (lowest action index on ties) is stationary.
    """
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    dims, nxt, rew, term, dead = _transitions(spec)
    v = np.zeros(len(dead))
    while True:
        q = rew + np.where(term, 0.0, gamma * v[nxt])
        q[dead] = 0.0
        new_v = q.max(axis=1)
        if np.max(np.abs(new_v - v)) < tol:
            break
        v = new_v
    pol = np.argmax(q, axis=1).astype(np.int8)
    pol[dead] = NOOP
    return TabularSolution(spec, dims, pol[None], q, q.max(axis=1))


def rollout(env: GridEnv, choose) -> float:
    """Play one episode choosing actions with ``choose(latent, t)``."""
    env.reset()
    total, t = 0.0, 0
    while not env.done:
        _, r, _ = env.step(choose(env.latent, t))
        total += r
        t += 1
    return total


def play_optimal(env: GridEnv, sol: TabularSolution) -> tuple[float, float]:
    """(achieved return, predicted optimum) for one fresh episode."""
    env.reset()
    predicted = sol.value(env.latent)
    total, t = 0.0, 0
    while not env.done:
        _, r, _ = env.step(sol.action(env.latent, t))
        total += r
        t += 1
    return total, predicted


def probe_states(spec: TaskSpec, count: int, seed: int) -> list[Latent]:
    """Latent states valid for every built-in task (random non-empty item mask)."""
    rng = np.random.default_rng(seed)
    g = spec.grid_size
    out = []
    cells = list(product(range(g), range(g)))
    while len(out) < count:
        ay, ax = cells[rng.integers(len(cells))]
        oy, ox = cells[rng.integers(len(cells))]
        if (ay, ax) == (oy, ox):
            continue
        out.append(Latent(int(ay), int(ax), int(oy), int(ox), int(rng.integers(0, 2)),
                          int(rng.integers(1, 16))))
    return out
