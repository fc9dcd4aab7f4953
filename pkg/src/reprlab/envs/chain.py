"""A 5-state deterministic chain, small enough for exact Q* by value iteration."""

from __future__ import annotations

import numpy as np

from reprlab.errors import ContractError

LEFT, RIGHT = 0, 1


class ChainEnv:
    """States 0..n-1 on a line; reaching the right end pays 1 and terminates.

    Episodes start in a uniformly drawn non-terminal state.  Observations are
    one-hot vectors.
    """

    action_repeat = 1

    def __init__(self, seed: int, n_states: int = 5, step_limit: int = 50):
        self.n_states = n_states
        self.n_actions = 2
        self.obs_shape = (n_states,)
        self.step_limit = step_limit
        self.rng = np.random.default_rng(seed)
        self.state = 0
        self.steps = 0
        self.done = True
        self.truncated = False
        self.raw_obs: np.ndarray | None = None

    @staticmethod
    def encode(raw) -> np.ndarray:
        return np.asarray(raw, dtype=np.float64)

    def _observe(self) -> np.ndarray:
        self.raw_obs = np.eye(self.n_states)[self.state]
        return self.raw_obs

    def reset(self) -> np.ndarray:
        self.state = int(self.rng.integers(0, self.n_states - 1))
        self.steps = 0
        self.done = False
        self.truncated = False
        return self._observe()

    def step(self, action: int):
        if self.done:
            raise ContractError("step called on a terminal environment")
        s = self.state + (1 if action == RIGHT else -1)
        self.state = min(max(s, 0), self.n_states - 1)
        self.steps += 1
        terminal = self.state == self.n_states - 1
        reward = 1.0 if terminal else 0.0
        if not terminal and self.steps >= self.step_limit:
            self.truncated = True
            terminal = True
        self.done = terminal
        return self._observe(), reward, terminal


def chain_q_star(n_states: int = 5, gamma: float = 0.99, tol: float = 1e-14) -> np.ndarray:
    """Q*(s, a) for the non-terminal states, by value iteration."""
    n = n_states
    q = np.zeros((n, 2))
    while True:
        v = q.max(axis=1)
        v[n - 1] = 0.0
        new = np.zeros_like(q)
        for s in range(n - 1):
            for a, step in ((LEFT, -1), (RIGHT, 1)):
                s2 = min(max(s + step, 0), n - 1)
                r = 1.0 if s2 == n - 1 else 0.0
                new[s, a] = r + (0.0 if s2 == n - 1 else gamma * v[s2])
        if np.max(np.abs(new - q)) < tol:
            return new[: n - 1]
        q = new
