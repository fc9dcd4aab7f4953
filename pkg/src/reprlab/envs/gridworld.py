"""Deterministic desk-scale grid tasks.

All built-in tasks share one latent world: an agent cell, one moving object
cell, an auxiliary code ``aux`` (the object's diagonal heading plus a
move-phase counter for bouncing objects, a move-phase bit for pursuers)
and a bitmask over the task's item cells.  What differs per task is the object's dynamics, the reward rule, and
which observation plane the object or items are drawn on:

========  ==========  =======================================  =====
task      object      reward                                   plane
========  ==========  =======================================  =====
chase     bounces     +1 per catch, the prey then respawns     1
avoid     pursues     +0.1 per step, -1 and terminal on contact 2
collect   (hidden)    +1 per item, terminal when all gathered  3
========  ==========  =======================================  =====

Plane 0 always holds the agent.  The agent advances one cell per decision,
a pursuer one cell every other decision and a bouncing object one diagonal
cell every ``object_period`` decisions.  Each decision is repeated for
``action_repeat`` frames and movement happens on the last of them.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np

from reprlab.errors import ConfigurationError, ContractError

ACTIONS = ("up", "down", "left", "right", "noop")
NOOP = 4
_DY = np.array([-1, 1, 0, 0, 0])
_DX = np.array([0, 0, -1, 1, 0])
# diagonal headings for bouncing objects, indexed by aux % 4; aux // 4 counts
# decisions up to the next move (bouncing objects move once per object_period)
_HEAD_DY = np.array([-1, -1, 1, 1])
_HEAD_DX = np.array([-1, 1, -1, 1])

RAW_ON = 255


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    dynamics: str                 # "bounce" | "pursue" | "none"
    reward_rule: str              # "catch" | "evade" | "gather"
    render_plane: int
    grid_size: int = 8
    planes: int = 4
    frame_limit: int = 200
    action_repeat: int = 4
    history: int = 4
    noop_max: int = 30
    n_actions: int = 5
    item_cells: tuple[tuple[int, int], ...] = ()
    min_start_distance: int = 0
    survive_reward: float = 0.1
    object_period: int = 2        # a bouncing object moves once per this many decisions
    catch_radius: int = 0         # Chebyshev distance at which a prey counts as caught
    contact_reward: float = -1.0

    @property
    def step_limit(self) -> int:
        return self.frame_limit // self.action_repeat

    @property
    def obs_shape(self) -> tuple[int, int, int]:
        return (self.history * self.planes, self.grid_size, self.grid_size)

    @property
    def n_items(self) -> int:
        return len(self.item_cells)


_COLLECT_ITEMS = ((1, 1), (1, 6), (6, 1), (6, 6))

BUILTIN_TASKS: dict[str, TaskSpec] = {
    "chase": TaskSpec("chase", "bounce", "catch", render_plane=1, object_period=4, catch_radius=1),
    "avoid": TaskSpec("avoid", "pursue", "evade", render_plane=2, min_start_distance=4),
    "collect": TaskSpec("collect", "none", "gather", render_plane=3, item_cells=_COLLECT_ITEMS),
}

_registry: dict[str, TaskSpec] = dict(BUILTIN_TASKS)


def register_task(spec: TaskSpec) -> None:
    """Add an extension task to the registry (ids must be unique)."""
    if spec.task_id in _registry:
        raise ConfigurationError(f"task {spec.task_id!r} already registered")
    _validate(spec)
    _registry[spec.task_id] = spec


def task_spec(task_id: str, **overrides) -> TaskSpec:
    if task_id not in _registry:
        raise ConfigurationError(f"unknown task_id {task_id!r}; known: {sorted(_registry)}")
    spec = _registry[task_id]
    if overrides:
        spec = replace(spec, **overrides)
        _validate(spec)
    return spec


def registered_tasks() -> list[str]:
    return sorted(_registry)


def _validate(spec: TaskSpec) -> None:
    if spec.dynamics not in ("bounce", "pursue", "none"):
        raise ConfigurationError(f"unknown dynamics {spec.dynamics!r}")
    if spec.reward_rule not in ("catch", "evade", "gather"):
        raise ConfigurationError(f"unknown reward rule {spec.reward_rule!r}")
    if spec.reward_rule == "gather" and not spec.item_cells:
        raise ConfigurationError("gather tasks need item cells")
    if not 0 < spec.render_plane < spec.planes:
        raise ConfigurationError("render_plane must be a non-agent plane")
    if spec.object_period < 1:
        raise ConfigurationError("object_period must be at least 1")
    if spec.n_actions < 5:
        raise ConfigurationError("at least the 5 basic actions are required")
    if spec.frame_limit % spec.action_repeat:
        raise ConfigurationError("frame_limit must be a multiple of action_repeat")
    for y, x in spec.item_cells:
        if not (0 <= y < spec.grid_size and 0 <= x < spec.grid_size):
            raise ConfigurationError(f"item cell {(y, x)} outside the grid")


# -- preprocessing ------------------------------------------------------------
def rescale(raw) -> np.ndarray:
    """f(x) = 2(x/255 - 0.5) without range checks."""
    return 2.0 * (np.asarray(raw, dtype=np.float64) / 255.0 - 0.5)


def preprocess(raw) -> np.ndarray:
    """Map raw byte planes in [0, 255] onto [-1, 1]."""
    arr = np.asarray(raw)
    if arr.size and (arr.min() < 0 or arr.max() > 255):
        raise ContractError("raw frame values must lie in [0, 255]")
    return rescale(arr)


def unpreprocess(x) -> np.ndarray:
    return (np.asarray(x, dtype=np.float64) / 2.0 + 0.5) * 255.0


# -- world dynamics (vectorised over arrays of latent states) -------------------
def advance(spec: TaskSpec, ay, ax, oy, ox, aux, items, action, *, idle: bool = False):
    """One decision step of the latent world.

    Every argument may be a numpy array (broadcast together).  Returns
    ``(ay, ax, oy, ox, aux, items, reward, terminal)``.  With ``idle`` the
    agent does not act and no reward or terminal is produced; this is the
    no-op warm-up at episode start.
    """
    g = spec.grid_size
    action = np.asarray(action)
    ay = np.asarray(ay)
    ax = np.asarray(ax)
    if idle:
        nay, nax = ay, ax
    else:
        nay = np.clip(ay + _DY[action], 0, g - 1)
        nax = np.clip(ax + _DX[action], 0, g - 1)

    oy, ox, aux = np.asarray(oy), np.asarray(ox), np.asarray(aux)
    if spec.dynamics == "bounce":
        heading, phase = aux % 4, aux // 4
        dy, dx = _HEAD_DY[heading], _HEAD_DX[heading]
        ty, tx = oy + dy, ox + dx
        fy = (ty < 0) | (ty > g - 1)
        fx = (tx < 0) | (tx > g - 1)
        dy = np.where(fy, -dy, dy)
        dx = np.where(fx, -dx, dx)
        moving = phase == spec.object_period - 1
        noy = np.where(moving, oy + dy, oy)
        nox = np.where(moving, ox + dx, ox)
        nheading = np.where(moving, (dy > 0) * 2 + (dx > 0), heading)
        naux = nheading + 4 * ((phase + 1) % spec.object_period)
    elif spec.dynamics == "pursue":
        moving = (aux == 1) & (not idle)
        gy, gx = nay - oy, nax - ox
        vertical = np.abs(gy) >= np.abs(gx)
        step_y = np.where(vertical, np.sign(gy), 0)
        step_x = np.where(vertical, 0, np.sign(gx))
        noy = np.where(moving, oy + step_y, oy)
        nox = np.where(moving, ox + step_x, ox)
        naux = 1 - aux
    else:
        noy, nox, naux = oy, ox, aux

    items = np.asarray(items)
    reward = np.zeros(np.broadcast(nay, noy, items).shape)
    terminal = np.zeros(reward.shape, dtype=bool)
    if idle:
        return nay, nax, noy, nox, naux, items, reward, terminal

    contact = ((nay == noy) & (nax == nox)) | ((nay == oy) & (nax == ox))
    if spec.reward_rule == "catch":
        if spec.catch_radius:
            contact = contact | ((np.abs(nay - noy) <= spec.catch_radius)
                                 & (np.abs(nax - nox) <= spec.catch_radius))
        reward = reward + contact
        # the caught prey reappears on the far side of the board, turned
        ry, rx = (nay + g // 2) % g, (nax + g // 2) % g
        noy = np.where(contact, ry, noy)
        nox = np.where(contact, rx, nox)
        naux = np.where(contact, (naux % 4 + 1) % 4 + 4 * (naux // 4), naux)
    elif spec.reward_rule == "evade":
        reward = np.where(contact, spec.contact_reward, spec.survive_reward) + reward
        terminal = terminal | contact
    elif spec.reward_rule == "gather":
        new_items = items.copy() if items.ndim else np.array(items)
        for k, (iy, ix) in enumerate(spec.item_cells):
            bit = 1 << k
            hit = (nay == iy) & (nax == ix) & ((items & bit) != 0)
            reward = reward + hit
            new_items = np.where(hit, new_items & ~bit, new_items)
        items = new_items
        terminal = terminal | (items == 0)
    return nay, nax, noy, nox, naux, items, reward, terminal


def render(spec: TaskSpec, ay, ax, oy, ox, items) -> np.ndarray:
    """Raw byte frame (planes, H, W) for one latent state."""
    g = spec.grid_size
    frame = np.zeros((spec.planes, g, g), dtype=np.uint8)
    frame[0, ay, ax] = RAW_ON
    if spec.dynamics != "none":
        frame[spec.render_plane, oy, ox] = RAW_ON
    for k, (iy, ix) in enumerate(spec.item_cells):
        if items & (1 << k):
            frame[spec.render_plane, iy, ix] = RAW_ON
    return frame


@dataclass
class Latent:
    ay: int
    ax: int
    oy: int
    ox: int
    aux: int
    items: int

    def as_tuple(self) -> tuple[int, int, int, int, int, int]:
        return (self.ay, self.ax, self.oy, self.ox, self.aux, self.items)


def sample_start(spec: TaskSpec, rng: np.random.Generator) -> Latent:
    g = spec.grid_size
    forbidden = set(spec.item_cells)
    while True:
        ay, ax = (int(v) for v in rng.integers(0, g, size=2))
        if (ay, ax) not in forbidden:
            break
    while True:
        oy, ox = (int(v) for v in rng.integers(0, g, size=2))
        if (oy, ox) != (ay, ax) and abs(oy - ay) + abs(ox - ax) >= spec.min_start_distance:
            break
    aux = int(rng.integers(0, 4 * spec.object_period)) if spec.dynamics == "bounce" else 0
    items = (1 << spec.n_items) - 1
    return Latent(ay, ax, oy, ox, aux, items)


class GridEnv:
    """Single-owner environment instance.  ``step`` returns preprocessed
    observations; the matching raw byte stack is kept in ``raw_obs``."""

    encode = staticmethod(rescale)

    def __init__(self, spec: TaskSpec, seed: int):
        self.spec = spec
        self.action_repeat = spec.action_repeat
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.n_actions = spec.n_actions
        self.obs_shape = spec.obs_shape
        self.latent: Latent | None = None
        self.frames: list[np.ndarray] = []
        self.steps = 0
        self.noops = 0
        self.done = True
        self.truncated = False
        self.raw_obs: np.ndarray | None = None

    @property
    def frame_count(self) -> int:
        return self.steps * self.spec.action_repeat

    def reset(self) -> np.ndarray:
        spec = self.spec
        lat = sample_start(spec, self.rng)
        self.noops = int(self.rng.integers(1, spec.noop_max + 1))
        frames = [render(spec, lat.ay, lat.ax, lat.oy, lat.ox, lat.items)]
        for _ in range(self.noops):
            out = advance(spec, *lat.as_tuple(), NOOP, idle=True)
            lat = Latent(*(int(v) for v in out[:6]))
            frames.append(render(spec, lat.ay, lat.ax, lat.oy, lat.ox, lat.items))
        self.latent = lat
        self.frames = frames[-spec.history:]
        while len(self.frames) < spec.history:
            self.frames.insert(0, self.frames[0])
        self.steps = 0
        self.done = False
        self.truncated = False
        return self._observe()

    def _observe(self) -> np.ndarray:
        self.raw_obs = np.concatenate(self.frames, axis=0)
        return rescale(self.raw_obs)

    def step(self, action: int) -> tuple[np.ndarray, float, bool]:
        if self.done:
            raise ContractError("step called on a terminal environment; call reset()")
        if not 0 <= action < self.n_actions:
            raise ContractError(f"action {action} outside [0, {self.n_actions})")
        spec = self.spec
        a = action if action < 5 else NOOP
        reward = 0.0
        terminal = False
        for tick in range(spec.action_repeat):
            if tick == spec.action_repeat - 1:
                out = advance(spec, *self.latent.as_tuple(), a)
                self.latent = Latent(*(int(v) for v in out[:6]))
                reward += float(out[6])
                terminal = bool(out[7])
        self.steps += 1
        lat = self.latent
        self.frames = self.frames[1:] + [render(spec, lat.ay, lat.ax, lat.oy, lat.ox, lat.items)]
        if not terminal and self.steps >= spec.step_limit:
            terminal = True
            self.truncated = True
        self.done = terminal
        return self._observe(), reward, terminal


def make_task(task_id: str, seed: int, **overrides) -> GridEnv:
    return GridEnv(task_spec(task_id, **overrides), seed)


def dump_trajectory(path, rows: Iterable[tuple[int, int, float, bool]]) -> None:
    """Write (frame, action, reward, terminal) rows as CSV."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "action", "reward", "terminal"])
        for frame, action, reward, terminal in rows:
            w.writerow([frame, action, repr(float(reward)), int(bool(terminal))])
