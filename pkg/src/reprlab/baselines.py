"""Comparison conditions: Fisher-weighted anchoring (EWC, online-EWC) and the
registry of retention strategies the harness can run."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from reprlab.errors import ConfigurationError, ContractError
from reprlab.tensor import autodiff as ad
from reprlab.tensor.autodiff import Tensor
from reprlab.tensor.nn import Network, NetworkParams

log = logging.getLogger(__name__)


@dataclass
class FisherDiagonal:
    """Per-parameter importances aligned with a parameter layout."""

    values: NetworkParams
    beta: float = 1.0

    @property
    def layout_id(self) -> str:
        return self.values.layout_id

    @property
    def flat(self) -> np.ndarray:
        return self.values.flat


@dataclass
class EwcAnchor:
    params: NetworkParams
    fisher: FisherDiagonal
    task_index: int


def fisher_diag(net: Network, params: NetworkParams, states, beta: float = 1.0) -> FisherDiagonal:
    """beta^2 * mean over states of sum_a (dQ(s, a)/dtheta_i)^2, per parameter.

    Each state gets its own forward pass and one backward pass per action.
    """
    states = np.asarray(states)
    if len(states) == 0:
        raise ContractError("fisher_diag needs at least one state")
    acc = np.zeros(params.flat.size, dtype=np.float64)
    names = params.names()
    for s in states:
        leaves = params.leaves()
        q = net.apply((params, leaves), s[None].astype(params.dtype, copy=False))
        n_actions = q.shape[1]
        for a in range(n_actions):
            onehot = np.zeros(q.shape, dtype=q.dtype)
            onehot[0, a] = 1.0
            gs = ad.grad(q, [leaves[n] for n in names], grad_output=Tensor(onehot))
            g = params.gather(dict(zip(names, gs))).flat.astype(np.float64)
            acc += g * g
    vals = (beta * beta) * acc / len(states)
    return FisherDiagonal(NetworkParams(params.segments, vals.astype(params.dtype)), beta)


def _anchor_parts(pair_or_params, anchor: EwcAnchor):
    if isinstance(pair_or_params, tuple):
        store, leaves = pair_or_params
    else:
        store, leaves = pair_or_params, None
    if store.layout_id != anchor.params.layout_id or store.layout_id != anchor.fisher.layout_id:
        raise ContractError("EWC anchor layout does not match the parameters")
    return store, leaves


def ewc_penalty(pair_or_params, anchors) -> Tensor:
    """sum over anchors of sum_i F_i (theta_i - theta*_i)^2.

    Pass the ``(params, leaves)`` pair from ``differentiable`` to get a
    differentiable penalty, or plain parameters for a value.
    """
    total: Tensor | None = None
    for anchor in anchors:
        store, leaves = _anchor_parts(pair_or_params, anchor)
        for seg in store.segments:
            theta = leaves[seg.name] if leaves is not None else Tensor(store[seg.name])
            diff = theta - anchor.params[seg.name]
            term = (diff * diff * anchor.fisher.values[seg.name]).sum()
            total = term if total is None else total + term
    if total is None:
        return Tensor(np.zeros(()))
    return total


def ewc_term(pair, anchors, lam: float, batch_size: int | None = None) -> Tensor:
    """(lambda / 2) * penalty, divided by the batch size when one is given.

    The long-term EWC objective is (1/N)(sum_j L_D_j + lambda/2 * L_EWC); with
    the distillation part already batch-meaned this term supplies the rest.
    """
    term = ewc_penalty(pair, anchors) * (lam / 2.0)
    if batch_size:
        term = term * (1.0 / batch_size)
    return term


def minmax_normalize(f: np.ndarray) -> np.ndarray:
    lo, hi = float(f.min()), float(f.max())
    if hi == lo:
        log.warning("Fisher diagonal is constant; min-max normalisation gives zeros")
        return np.zeros_like(f)
    return (f - lo) / (hi - lo)


def online_ewc_update(f_star: FisherDiagonal | None, f_t: FisherDiagonal,
                      gamma: float = 0.99) -> FisherDiagonal:
    """F* <- gamma F* + minmax(F_t); the first task just stores minmax(F_1)."""
    if not 0.0 <= gamma < 1.0:
        raise ConfigurationError("online-EWC gamma must lie in [0, 1)")
    norm = minmax_normalize(f_t.flat.astype(np.float64))
    if f_star is not None:
        if f_star.layout_id != f_t.layout_id:
            raise ContractError("online-EWC Fisher layouts differ")
        norm = gamma * f_star.flat.astype(np.float64) + norm
    vals = NetworkParams(f_t.values.segments, norm.astype(f_t.flat.dtype))
    return FisherDiagonal(vals, f_t.beta)


# -- condition registry -----------------------------------------------------------
@dataclass(frozen=True)
class Condition:
    """How a condition retains earlier tasks.

    ``retention``: pseudo (alpha-weighted mix), none, or penalty.  ``rehearsal_source``
    names where the rehearsal inputs come from: gan, replay, replay-limited.
    ``dual_memory`` is False for the single-network PR ablation.
    """

    condition_id: str
    retention: str
    rehearsal_source: str | None = None
    mode: str = "q-values"
    uses_gan: bool = False
    dual_memory: bool = True
    penalty: str | None = None
    description: str = ""


CONDITIONS: dict[str, Condition] = {
    c.condition_id: c for c in (
        Condition("repr", "pseudo", "gan", uses_gan=True,
                  description="dual memory, GAN pseudo-rehearsal of Q-values"),
        Condition("repr-policy", "pseudo", "gan", mode="policy", uses_gan=True,
                  description="dual memory, GAN pseudo-rehearsal of the softmax policy"),
        Condition("no-reh", "none", description="distillation only, nothing retained"),
        Condition("reh", "pseudo", "replay",
                  description="rehearsal of stored replay states with previous-network targets"),
        Condition("reh-limit", "pseudo", "replay-limited",
                  description="reh with storage capped at the GAN's parameter bytes"),
        Condition("pr", "pseudo", "gan", uses_gan=True, dual_memory=False,
                  description="single network: DQN loss plus pseudo-rehearsal"),
        Condition("ewc", "penalty", penalty="ewc", description="distillation plus one EWC anchor per task"),
        Condition("online-ewc", "penalty", penalty="online-ewc",
                  description="distillation plus one rolling online-EWC anchor"),
    )
}


def get_condition(condition_id: str) -> Condition:
    try:
        return CONDITIONS[condition_id]
    except KeyError:
        raise ConfigurationError(
            f"unknown condition {condition_id!r}; known: {sorted(CONDITIONS)}") from None


def reh_limit_budget(gan_param_bytes: int, state_bytes: int) -> int:
    """Number of states storable in the GAN's parameter footprint."""
    if state_bytes <= 0:
        raise ConfigurationError("state size must be positive")
    return int(gan_param_bytes // state_bytes)


def per_task_quota(budget: int, n_tasks: int) -> list[int]:
    """Split ``budget`` equally over ``n_tasks``; leftovers go to the earliest tasks."""
    if n_tasks <= 0:
        return []
    base, extra = divmod(budget, n_tasks)
    return [base + (1 if i < extra else 0) for i in range(n_tasks)]


def run_condition(condition_id: str, tasks, cfg: dict | None = None, *, out_dir, seed: int = 0):
    """Run the sequential protocol under one condition; returns the run summary."""
    from reprlab.harness.plan import plan_from_mapping
    from reprlab.harness.runner import run_plan

    get_condition(condition_id)
    mapping = dict(cfg or {})
    mapping.update({"tasks": list(tasks), "condition": condition_id, "seeds": [seed],
                    "out": str(out_dir)})
    return run_plan(plan_from_mapping(mapping))
