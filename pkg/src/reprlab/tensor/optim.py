"""RMSProp (non-centred, TensorFlow style) and Adam over flat parameter vectors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from reprlab.errors import ContractError
from reprlab.tensor.nn import NetworkParams


def global_norm(grads: NetworkParams) -> float:
    return float(np.sqrt(np.sum(np.square(grads.flat, dtype=np.float64))))


def clip_global_norm(grads: NetworkParams, max_norm: float) -> NetworkParams:
    """Rescale ``grads`` so their joint L2 norm is at most ``max_norm``."""
    if max_norm <= 0:
        raise ContractError("max_norm must be positive")
    norm = global_norm(grads)
    if norm <= max_norm:
        return grads
    return NetworkParams(grads.segments, grads.flat * (max_norm / norm))


@dataclass
class OptimizerState:
    kind: str
    lr: float
    layout_id: str
    decay: float = 0.99          # rmsprop
    momentum: float = 0.0        # rmsprop
    beta1: float = 0.0           # adam
    beta2: float = 0.99          # adam
    eps: float = 1e-6
    step: int = 0
    slots: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> OptimizerState:
        return OptimizerState(self.kind, self.lr, self.layout_id, self.decay, self.momentum,
                              self.beta1, self.beta2, self.eps, self.step,
                              {k: v.copy() for k, v in self.slots.items()})


def rmsprop(params: NetworkParams, lr: float = 0.00025, decay: float = 0.99,
            momentum: float = 0.0, eps: float = 1e-6) -> OptimizerState:
    z = np.zeros_like(params.flat)
    return OptimizerState("rmsprop", lr, params.layout_id, decay=decay, momentum=momentum,
                          eps=eps, slots={"ms": z, "mom": z.copy()})


def adam(params: NetworkParams, lr: float = 0.001, beta1: float = 0.0, beta2: float = 0.99,
         eps: float = 1e-8) -> OptimizerState:
    z = np.zeros_like(params.flat)
    return OptimizerState("adam", lr, params.layout_id, beta1=beta1, beta2=beta2, eps=eps,
                          slots={"m": z, "v": z.copy()})


def _check(state: OptimizerState, params: NetworkParams, grads: NetworkParams) -> None:
    if not (state.layout_id == params.layout_id == grads.layout_id):
        raise ContractError("optimizer, parameter and gradient layouts differ")


def rmsprop_step(state: OptimizerState, params: NetworkParams, grads: NetworkParams) -> NetworkParams:
    _check(state, params, grads)
    g = grads.flat
    ms = state.slots["ms"]
    ms *= state.decay
    ms += (1.0 - state.decay) * g * g
    mom = state.slots["mom"]
    mom *= state.momentum
    mom += state.lr * g / np.sqrt(ms + state.eps)
    state.step += 1
    return params.with_flat(params.flat - mom)


def adam_step(state: OptimizerState, params: NetworkParams, grads: NetworkParams) -> NetworkParams:
    _check(state, params, grads)
    g = grads.flat
    state.step += 1
    t = state.step
    m, v = state.slots["m"], state.slots["v"]
    m *= state.beta1
    m += (1.0 - state.beta1) * g
    v *= state.beta2
    v += (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    return params.with_flat(params.flat - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))


def apply_update(state: OptimizerState, params: NetworkParams, grads: NetworkParams) -> NetworkParams:
    if state.kind == "rmsprop":
        return rmsprop_step(state, params, grads)
    if state.kind == "adam":
        return adam_step(state, params, grads)
    raise ContractError(f"unknown optimizer kind {state.kind}")
