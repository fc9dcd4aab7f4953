"""Minimal dense-array engine: autodiff, layers, optimizers, checkpoints."""

from reprlab.tensor.autodiff import Tensor, grad, no_grad
from reprlab.tensor.nn import (
    LayerSpec,
    Network,
    NetworkParams,
    NetworkSpec,
    backward,
    differentiable,
    forward,
    value_and_grad,
)
from reprlab.tensor.optim import (
    OptimizerState,
    adam,
    adam_step,
    apply_update,
    clip_global_norm,
    global_norm,
    rmsprop,
    rmsprop_step,
)

__all__ = [
    "Tensor", "grad", "no_grad",
    "LayerSpec", "Network", "NetworkParams", "NetworkSpec",
    "backward", "differentiable", "forward", "value_and_grad",
    "OptimizerState", "adam", "adam_step", "apply_update", "clip_global_norm",
    "global_norm", "rmsprop", "rmsprop_step",
]
