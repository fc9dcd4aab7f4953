"""Deep Q-learning for the short-term memory system.

Frame accounting: one agent decision consumes ``env.action_repeat`` frames, a
gradient update happens every ``update_frequency`` decisions, so a budget of
F frames corresponds to F / (repeat * update_frequency) optimizer steps.
Replay start, target refresh, exploration decay and the checkpoint window are
all counted in frames.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Callable

import numpy as np

from reprlab.errors import ConfigurationError, ContractError, NumericError
from reprlab.tensor import autodiff as ad
from reprlab.tensor.checkpoint import load_arrays, save_arrays
from reprlab.tensor.nn import Network, NetworkParams, backward, differentiable
from reprlab.tensor.optim import OptimizerState, clip_global_norm, rmsprop, rmsprop_step


@dataclass
class Transition:
    s: np.ndarray
    a: int
    r: float
    d: bool
    s2: np.ndarray


class ReplayBuffer:
    """Ring buffer of raw (un-preprocessed) transitions from the current task."""

    def __init__(self, capacity: int, obs_shape, dtype=np.uint8):
        if capacity <= 0:
            raise ConfigurationError("replay capacity must be positive")
        self.capacity = int(capacity)
        self.obs_shape = tuple(obs_shape)
        self.s = np.zeros((self.capacity,) + self.obs_shape, dtype=dtype)
        self.s2 = np.zeros_like(self.s)
        self.a = np.zeros(self.capacity, dtype=np.int64)
        self.r = np.zeros(self.capacity, dtype=np.float64)
        self.d = np.zeros(self.capacity, dtype=bool)
        self.cursor = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def add(self, s, a: int, r: float, d: bool, s2) -> None:
        i = self.cursor
        self.s[i] = s
        self.a[i] = a
        self.r[i] = r
        self.d[i] = d
        self.s2[i] = s2
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def get(self, i: int) -> Transition:
        return Transition(self.s[i], int(self.a[i]), float(self.r[i]), bool(self.d[i]), self.s2[i])

    def sample_indices(self, batch: int, rng: np.random.Generator) -> np.ndarray:
        if self.size == 0:
            raise ContractError("cannot sample from an empty replay buffer")
        return rng.integers(0, self.size, size=batch)

    def sample(self, batch: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
        idx = self.sample_indices(batch, rng)
        return {"s": self.s[idx], "a": self.a[idx], "r": self.r[idx], "d": self.d[idx],
                "s2": self.s2[idx]}

    def states(self) -> np.ndarray:
        """All stored states (a view, oldest-first order not guaranteed)."""
        return self.s[:self.size]

    @property
    def nbytes(self) -> int:
        return sum(x.nbytes for x in (self.s, self.s2, self.a, self.r, self.d))

    def save(self, path) -> int:
        n = self.size
        return save_arrays(path, {"s": self.s[:n], "a": self.a[:n], "r": self.r[:n],
                                  "d": self.d[:n], "s2": self.s2[:n]},
                           meta={"capacity": self.capacity, "cursor": self.cursor})

    @classmethod
    def load(cls, path) -> ReplayBuffer:
        arrays, meta, _ = load_arrays(path)
        buf = cls(meta["capacity"], arrays["s"].shape[1:], arrays["s"].dtype)
        n = arrays["s"].shape[0]
        for k in ("s", "a", "r", "d", "s2"):
            getattr(buf, k)[:n] = arrays[k]
        buf.size = n
        buf.cursor = meta["cursor"]
        return buf


@dataclass(frozen=True)
class EpsilonSchedule:
    initial: float = 1.0
    final: float = 0.1
    final_frame: int = 50_000
    evaluation: float = 0.05

    def value(self, frame: int) -> float:
        if frame >= self.final_frame:
            return self.final
        return self.initial + (self.final - self.initial) * frame / self.final_frame


# -- targets and loss -----------------------------------------------------------
def dqn_target(reward: float, terminal: bool, next_q, gamma: float = 0.99) -> float:
    """y = r if terminal, else r + gamma * max_a' Q(s', a'; theta^-)."""
    if terminal:
        return float(reward)
    return float(reward) + gamma * float(np.max(next_q))


def q_values(net: Network, params: NetworkParams, x) -> np.ndarray:
    """Q(x, .) as a plain array, without recording a graph."""
    with ad.no_grad():
        return net.apply(params, x).data


def dqn_targets(net: Network, target_params: NetworkParams, r, d, s2_encoded,
                gamma: float = 0.99) -> np.ndarray:
    """Vectorised targets for a batch; next-state values are skipped where terminal."""
    r = np.asarray(r, dtype=np.float64)
    d = np.asarray(d, dtype=bool)
    y = r.copy()
    live = ~d
    if live.any():
        q2 = q_values(net, target_params, s2_encoded[live])
        y[live] += gamma * q2.max(axis=1)
    return y


def gather_actions(q: ad.Tensor, a) -> ad.Tensor:
    """Q(s_j, a_j) for each row j, differentiable in ``q``."""
    a = np.asarray(a)
    mask = np.zeros(q.shape, dtype=q.dtype)
    mask[np.arange(len(a)), a] = 1.0
    return (q * mask).sum(axis=1)


def dqn_loss(net: Network, pair, s_encoded, a, y) -> ad.Tensor:
    """Mean over the batch of (y - Q(s, a; theta))^2 with ``y`` held constant."""
    if len(a) == 0:
        raise ContractError("dqn_loss needs a non-empty batch")
    q = net.apply(pair, s_encoded)
    diff = gather_actions(q, a) - np.asarray(y, dtype=q.dtype)
    return (diff * diff).mean()


# -- acting ---------------------------------------------------------------------
def _egreedy(qfn: Callable[[], np.ndarray], eps: float, n_actions: int,
             rng: np.random.Generator) -> int:
    if rng.random() < eps:
        return int(rng.integers(n_actions))
    return int(np.argmax(qfn()))  # np.argmax returns the first maximum


def select_action(q, eps: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy choice; greedy ties go to the lowest action index."""
    if not 0.0 <= eps <= 1.0:
        raise ContractError(f"epsilon {eps} outside [0, 1]")
    q = np.asarray(q)
    return _egreedy(lambda: q, eps, q.shape[-1], rng)


class WindowSelector:
    """Tracks windowed averages of a training signal and keeps the parameters
    from the best window (``mode='max'`` for scores, ``'min'`` for losses)."""

    def __init__(self, window: int, mode: str = "max"):
        if mode not in ("max", "min"):
            raise ConfigurationError("mode must be 'max' or 'min'")
        if window <= 0:
            raise ConfigurationError("window must be positive")
        self.window = int(window)
        self.mode = mode
        self.next_boundary = self.window
        self._sum = 0.0
        self._count = 0
        self.history: list[tuple[int, float]] = []
        self.best_value: float | None = None
        self.best_index: int | None = None
        self.best_params: NetworkParams | None = None

    def add(self, value: float) -> None:
        self._sum += float(value)
        self._count += 1

    def _better(self, v: float) -> bool:
        if self.best_value is None:
            return True
        return v > self.best_value if self.mode == "max" else v < self.best_value

    def close(self, params: NetworkParams, frame: int | None = None) -> bool:
        """End the current window; returns True when it became the best one."""
        if self._count == 0:
            return False
        v = self._sum / self._count
        self._sum, self._count = 0.0, 0
        self.history.append((frame if frame is not None else len(self.history), v))
        if self._better(v):
            self.best_value = v
            self.best_index = len(self.history) - 1
            self.best_params = params.copy()
            return True
        return False

    def maybe_close(self, frame: int, params: NetworkParams) -> None:
        if frame >= self.next_boundary:
            self.close(params, frame)
            while self.next_boundary <= frame:
                self.next_boundary += self.window


# -- short-term training --------------------------------------------------------
@dataclass
class StmConfig:
    frames: int = 400_000
    batch_size: int = 32
    replay_capacity: int = 50_000
    target_update_frames: int = 1_000
    gamma: float = 0.99
    update_frequency: int = 4
    lr: float = 0.00025
    decay: float = 0.99
    momentum: float = 0.0
    rms_eps: float = 1e-6
    clip_norm: float = 10.0
    eps_initial: float = 1.0
    eps_final: float = 0.1
    eps_final_frame: int = 50_000
    replay_start_frames: int = 5_000
    select_window_frames: int = 20_000

    @classmethod
    def from_mapping(cls, d) -> StmConfig:
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    def epsilon(self) -> EpsilonSchedule:
        return EpsilonSchedule(self.eps_initial, self.eps_final, self.eps_final_frame)

    def with_(self, **kw) -> StmConfig:
        return replace(self, **kw)


@dataclass
class StmResult:
    params: NetworkParams
    last_params: NetworkParams
    replay: ReplayBuffer
    window_history: list[tuple[int, float]]
    best_window: int | None
    frames: int
    updates: int
    losses: list[float] = field(default_factory=list)


def train_stm(net: Network, env, cfg: StmConfig, *, init_rng: np.random.Generator,
              sample_rng: np.random.Generator, act_rng: np.random.Generator,
              init_params: NetworkParams | None = None,
              dqn_weight: float = 1.0,
              extra_loss: Callable | None = None,
              on_frames: Callable[[int, NetworkParams], None] | None = None,
              callback_every: int | None = None,
              replay: ReplayBuffer | None = None,
              dtype=np.float64) -> StmResult:
    """Train a Q-network on one task with experience replay and a target network.

    ``extra_loss(pair, rng)`` adds a differentiable term to the objective
    (``dqn_weight`` scales the DQN term); the single-network pseudo-rehearsal
    baseline plugs in here.  ``on_frames(frames, params)`` fires every
    ``callback_every`` frames.  The returned ``params`` are those with the
    best windowed average training score.
    """
    params = init_params.copy() if init_params is not None else net.init(init_rng, dtype)
    target = params.copy()
    opt = rmsprop(params, cfg.lr, cfg.decay, cfg.momentum, cfg.rms_eps)
    schedule = cfg.epsilon()
    repeat = getattr(env, "action_repeat", 1)
    if replay is None:
        env.reset()
        replay = ReplayBuffer(cfg.replay_capacity, env.raw_obs.shape, env.raw_obs.dtype)
    selector = WindowSelector(cfg.select_window_frames, "max")
    encode = env.encode
    n_actions = env.n_actions
    frames = 0
    updates = 0
    decisions = 0
    losses: list[float] = []
    env.reset()
    s_raw = env.raw_obs.copy()
    ep_return = 0.0
    while frames < cfg.frames:
        eps = schedule.value(frames)
        a = _egreedy(lambda: q_values(net, params, encode(s_raw)[None])[0], eps, n_actions, act_rng)
        _, r, term = env.step(a)
        s2_raw = env.raw_obs.copy()
        replay.add(s_raw, a, r, term and not env.truncated, s2_raw)
        ep_return += r
        prev_frames = frames
        frames += repeat
        decisions += 1
        if term:
            selector.add(ep_return)
            ep_return = 0.0
            env.reset()
            s_raw = env.raw_obs.copy()
        else:
            s_raw = s2_raw
        if frames >= cfg.replay_start_frames and decisions % cfg.update_frequency == 0:
            batch = replay.sample(cfg.batch_size, sample_rng)
            y = dqn_targets(net, target, batch["r"], batch["d"], encode(batch["s2"]), cfg.gamma)
            pair = differentiable(params)
            loss = dqn_loss(net, pair, encode(batch["s"]), batch["a"], y)
            if dqn_weight != 1.0:
                loss = loss * dqn_weight
            if extra_loss is not None:
                loss = loss + extra_loss(pair, sample_rng)
            lv = loss.item()
            if not math.isfinite(lv):
                raise NumericError(f"non-finite STM loss {lv} at frame {frames} "
                                   f"(update {updates}, epsilon {eps:.3f})")
            grads = clip_global_norm(backward(loss, pair), cfg.clip_norm)
            params = rmsprop_step(opt, params, grads)
            losses.append(lv)
            updates += 1
        if frames // cfg.target_update_frames != prev_frames // cfg.target_update_frames:
            target = params.copy()
        selector.maybe_close(frames, params)
        if on_frames is not None and callback_every and \
                frames // callback_every != prev_frames // callback_every:
            on_frames(frames, params)
    selector.close(params, frames)
    best = selector.best_params if selector.best_params is not None else params.copy()
    return StmResult(best, params, replay, selector.history, selector.best_index, frames,
                     updates, losses)


# -- evaluation -----------------------------------------------------------------
def evaluate(net: Network, params: NetworkParams, env_factory: Callable[[int], object],
             episodes: int = 30, eps: float = 0.05,
             rng: np.random.Generator | None = None) -> list[float]:
    """Per-episode returns of the epsilon-greedy policy.

    ``env_factory(i)`` builds the environment for episode ``i``; all episodes
    run in lockstep so each decision is one batched forward pass.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    envs = [env_factory(i) for i in range(episodes)]
    for e in envs:
        e.reset()
    returns = [0.0] * episodes
    active = list(range(episodes))
    n_actions = envs[0].n_actions
    while active:
        x = np.stack([envs[i].encode(envs[i].raw_obs) for i in active])
        q = q_values(net, params, x)
        still = []
        for row, i in enumerate(active):
            a = _egreedy(lambda: q[row], eps, n_actions, rng)
            _, r, term = envs[i].step(a)
            returns[i] += r
            if not term:
                still.append(i)
        active = still
    return returns


def score_summary(scores) -> tuple[float, float]:
    """Mean and population standard deviation."""
    arr = np.asarray(scores, dtype=np.float64)
    return float(arr.mean()), float(arr.std())
