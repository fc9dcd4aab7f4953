"""Long-term DQN consolidation: distillation from the short-term network plus
pseudo-rehearsal against the previous long-term network.

Everything here is supervised regression or cross-entropy on fixed teacher
outputs; no bootstrapped target is ever formed.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from reprlab.agent.dqn import WindowSelector, q_values
from reprlab.errors import ConfigurationError, ContractError, NumericError
from reprlab.tensor import autodiff as ad
from reprlab.tensor.autodiff import Tensor
from reprlab.tensor.nn import Network, NetworkParams, backward, differentiable
from reprlab.tensor.optim import clip_global_norm, rmsprop, rmsprop_step

log = logging.getLogger(__name__)

MODES = ("q-values", "policy")


def check_alpha(alpha: float) -> float:
    if not 0.0 < alpha < 1.0:
        raise ConfigurationError(f"alpha must lie strictly between 0 and 1, got {alpha}")
    return float(alpha)


@dataclass
class ConsolidationConfig:
    alpha: float = 0.55
    mode: str = "q-values"
    standardize_q: bool = False
    frames: int = 400_000
    batch_size: int = 32
    frames_per_update: int = 16      # action repeat 4 x update frequency 4
    select_window_frames: int = 20_000
    lr: float = 0.00025
    decay: float = 0.99
    momentum: float = 0.0
    rms_eps: float = 1e-6
    clip_norm: float = 10.0
    standardize_sample: int = 1_000

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")

    @property
    def steps(self) -> int:
        return max(1, self.frames // self.frames_per_update)


# -- per-item losses --------------------------------------------------------------
def _sq_sum(q: Tensor, targets) -> Tensor:
    diff = q - np.asarray(targets, dtype=q.dtype)
    return (diff * diff).sum(axis=1)


def distill_items(net: Network, pair, states, teacher_q) -> Tensor:
    """Per-item sum over actions of (Q(s, a; theta) - Q(s, a; theta+))^2."""
    return _sq_sum(net.apply(pair, states), teacher_q)


def distill_loss(net: Network, pair, states, teacher_q) -> Tensor:
    """Batch mean of the per-item distillation error (the alpha = 1 limit of ltm_loss)."""
    return distill_items(net, pair, states, teacher_q).mean()


def pr_items(net: Network, pair, pseudo_states, pseudo_targets) -> Tensor:
    """Per-item sum over actions of (Q(s~, a; theta) - y~_a)^2."""
    return _sq_sum(net.apply(pair, pseudo_states), pseudo_targets)


def pr_loss(net: Network, pair, pseudo_states, pseudo_targets) -> Tensor:
    return pr_items(net, pair, pseudo_states, pseudo_targets).mean()


def ltm_loss(net: Network, pair, states, teacher_q, pseudo_states, pseudo_targets,
             alpha: float) -> Tensor:
    """(1/N) sum_j [alpha L_D_j + (1 - alpha) L_PR_j] over paired batches."""
    alpha = check_alpha(alpha)
    if len(states) != len(pseudo_states):
        raise ContractError("real and pseudo batches must have equal size")
    ld = distill_items(net, pair, states, teacher_q)
    lpr = pr_items(net, pair, pseudo_states, pseudo_targets)
    return (ld * alpha + lpr * (1.0 - alpha)).mean()


def cross_entropy(student_logits: Tensor, teacher_probs) -> Tensor:
    """Batch mean of -sum_a p_a log softmax(student)_a."""
    p = np.asarray(teacher_probs, dtype=student_logits.dtype)
    return -(ad.log_softmax(student_logits, axis=1) * p).sum(axis=1).mean()


def softmax_np(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    z = q - q.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def policy_distill_loss(net: Network, pair, states, teacher_q) -> Tensor:
    """Cross-entropy between softmax(teacher Q) and softmax(student Q), temperature 1."""
    return cross_entropy(net.apply(pair, states), softmax_np(teacher_q))


# -- Q standardisation -------------------------------------------------------------
@dataclass(frozen=True)
class AffineMap:
    shift: float
    scale: float

    def __call__(self, q) -> np.ndarray:
        return (np.asarray(q) - self.shift) / self.scale


def standardize_q(q_sample, min_states: int = 1_000) -> AffineMap:
    """Shift and scale that map the sampled Q-values to zero mean, unit variance."""
    q = np.asarray(q_sample, dtype=np.float64)
    if q.shape[0] < min_states:
        raise ContractError(f"standardisation needs at least {min_states} states, got {q.shape[0]}")
    shift = float(q.mean())
    scale = float(q.std())
    if not scale > 0.0:
        log.warning("Q-values have zero variance; standardisation scale clamped to 1")
        scale = 1.0
    return AffineMap(shift, scale)


# -- the long-term trainer ---------------------------------------------------------
@dataclass
class LtmResult:
    params: NetworkParams
    last_params: NetworkParams
    window_history: list[tuple[int, float]]
    best_window: int | None
    rows: list[tuple[int, float, float, float, float, str]] = field(default_factory=list)
    copied: bool = False


def batched_q(net: Network, params: NetworkParams, states, batch: int = 1_000,
              encode: Callable | None = None) -> np.ndarray:
    enc = encode if encode is not None else (lambda x: x)
    out = [q_values(net, params, enc(states[i:i + batch])) for i in range(0, len(states), batch)]
    return np.concatenate(out, axis=0)


def pseudo_targets(net: Network, prev_params: NetworkParams, pseudo_states,
                   mode: str = "q-values", encode: Callable | None = None) -> np.ndarray:
    """Frozen targets from the previous long-term network (softmax in policy mode)."""
    q = batched_q(net, prev_params, pseudo_states, encode=encode)
    return softmax_np(q) if mode == "policy" else q


def train_ltm(net: Network, stm_params: NetworkParams, replay_states: np.ndarray,
              encode: Callable, cfg: ConsolidationConfig, *, rng: np.random.Generator,
              prev_params: NetworkParams | None = None,
              pseudo_states: np.ndarray | None = None,
              pseudo_y: np.ndarray | None = None,
              pseudo_encode: Callable | None = None,
              task_index: int = 1,
              retention: str = "pseudo",
              penalty: Callable[[object], Tensor] | None = None,
              on_frames: Callable[[int, NetworkParams], None] | None = None,
              callback_every: int | None = None,
              metrics_path=None) -> LtmResult:
    """Teach the long-term network the current task while retaining old ones.

    ``replay_states`` are raw current-task states (``encode`` rescales them).
    ``retention`` selects how old tasks are kept:

    * ``"pseudo"``  alpha-weighted new/old mix with ``pseudo_states`` and
      ``pseudo_y`` (RePR, reh and reh-limit use this with generated or stored
      inputs; stored raw inputs come with ``pseudo_encode``),
    * ``"none"``    pure distillation (no-reh),
    * ``"penalty"`` distillation plus ``penalty(pair)`` (EWC variants).

    For the first task the short-term weights are copied verbatim.  Otherwise
    the checkpoint with the lowest windowed training loss is returned.
    """
    if task_index == 1:
        p = stm_params.copy()
        return LtmResult(p, p, [], None, [], copied=True)
    if prev_params is None:
        raise ConfigurationError("consolidating task > 1 needs the previous long-term network")
    if retention == "pseudo":
        check_alpha(cfg.alpha)
        if pseudo_states is None or len(pseudo_states) == 0:
            raise ConfigurationError("pseudo-rehearsal needs a pseudo buffer")
        if pseudo_y is None:
            pseudo_y = pseudo_targets(net, prev_params, pseudo_states, cfg.mode, pseudo_encode)
    elif retention == "penalty":
        if penalty is None:
            raise ConfigurationError("penalty retention needs a penalty function")
    elif retention != "none":
        raise ConfigurationError(f"unknown retention {retention!r}")

    affine = None
    if cfg.standardize_q and cfg.mode == "q-values":
        idx = rng.integers(0, len(replay_states), size=max(cfg.standardize_sample, 1_000))
        affine = standardize_q(batched_q(net, stm_params, encode(replay_states[idx])))

    params = prev_params.copy()
    opt = rmsprop(params, cfg.lr, cfg.decay, cfg.momentum, cfg.rms_eps)
    window_steps = max(1, cfg.select_window_frames // cfg.frames_per_update)
    selector = WindowSelector(window_steps, "min")
    rows: list[tuple[int, float, float, float, float, str]] = []
    n = cfg.batch_size
    steps = cfg.steps
    writer = None
    fh = None
    if metrics_path is not None:
        fh = open(metrics_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["step", "L_D", "L_PR", "combined", "alpha", "mode"])
    try:
        for step in range(1, steps + 1):
            idx = rng.integers(0, len(replay_states), size=n)
            s = encode(replay_states[idx]).astype(params.dtype, copy=False)
            teacher = q_values(net, stm_params, s)
            if affine is not None:
                teacher = affine(teacher)
            pair = differentiable(params)
            if cfg.mode == "policy":
                ld = policy_distill_loss(net, pair, s, teacher)
            else:
                ld = distill_loss(net, pair, s, teacher)
            lpr_v = float("nan")
            if retention == "pseudo":
                j = rng.integers(0, len(pseudo_states), size=n)
                ps = pseudo_states[j]
                if pseudo_encode is not None:
                    ps = pseudo_encode(ps)
                ps = ps.astype(params.dtype, copy=False)
                if cfg.mode == "policy":
                    lpr = cross_entropy(net.apply(pair, ps), pseudo_y[j])
                else:
                    lpr = pr_loss(net, pair, ps, pseudo_y[j])
                loss = ld * cfg.alpha + lpr * (1.0 - cfg.alpha)
                lpr_v = lpr.item()
                alpha = cfg.alpha
            elif retention == "penalty":
                lpen = penalty(pair)
                loss = ld + lpen
                lpr_v = lpen.item()
                alpha = 1.0
            else:
                loss = ld
                alpha = 1.0
            lv = loss.item()
            if not math.isfinite(lv):
                raise NumericError(f"non-finite long-term loss {lv} at step {step}")
            grads = clip_global_norm(backward(loss, pair), cfg.clip_norm)
            selector.add(lv)
            params = rmsprop_step(opt, params, grads)
            row = (step, ld.item(), lpr_v, lv, alpha, cfg.mode)
            rows.append(row)
            if writer is not None:
                writer.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3]), row[4], row[5]])
            if step % window_steps == 0:
                selector.close(params, step * cfg.frames_per_update)
            frames = step * cfg.frames_per_update
            if on_frames is not None and callback_every and \
                    frames // callback_every != (frames - cfg.frames_per_update) // callback_every:
                on_frames(frames, params)
    finally:
        if fh is not None:
            fh.close()
    selector.close(params, steps * cfg.frames_per_update)
    best = selector.best_params if selector.best_params is not None else params.copy()
    return LtmResult(best, params, selector.history, selector.best_index, rows)
