"""Independent reference computations shared by the test modules.

Nothing here calls the package's autodiff; gradients come from central
finite differences and forward passes from straight-line numpy.
"""

from __future__ import annotations

import numpy as np

from reprlab.tensor.nn import Network, NetworkParams, NetworkSpec


def central_diff(fn, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """d fn / d x by central differences; ``fn`` maps a flat float64 vector to a float."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (fn(x + e) - fn(x - e)) / (2 * h)
    return g


def rel_err(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-8)
    return float(np.max(np.abs(a - b)) / scale)


def param_fd(loss_of_params, params: NetworkParams, h: float = 1e-5) -> np.ndarray:
    """Finite-difference gradient of ``loss_of_params(NetworkParams) -> float``."""
    return central_diff(lambda flat: loss_of_params(params.with_flat(flat)), params.flat, h)


def tiny_net(layers, input_shape, seed: int = 0, init: str = "fan-in"):
    net = Network(NetworkSpec.from_dict({"input_shape": list(input_shape), "layers": layers,
                                          "init": init}))
    params = net.init(np.random.default_rng(seed), np.float64)
    # perturb biases so no unit sits exactly on a ReLU kink
    params = params.with_flat(params.flat + np.random.default_rng(seed + 1).normal(0, 0.05, params.flat.size))
    return net, params


def dense_mlp(n_in: int, hidden: int, n_out: int, seed: int = 0):
    return tiny_net([{"kind": "dense", "units": hidden}, {"kind": "tanh"},
                     {"kind": "dense", "units": n_out}], (n_in,), seed)


def conv2d_ref(x, w, b, stride: int, pad: int):
    """Direct-loop cross-correlation: x (N,C,H,W), w (F,C,k,k)."""
    n, c, h, wd = x.shape
    f, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - k) // stride + 1
    ow = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, f, oh, ow))
    for i in range(oh):
        for j in range(ow):
            patch = xp[:, :, i * stride:i * stride + k, j * stride:j * stride + k]
            out[:, :, i, j] = np.einsum("nckl,fckl->nf", patch, w)
    return out + b.reshape(1, f, 1, 1)


def deconv2d_ref(x, w, b, stride: int, pad: int, out_pad: int = 0):
    """Transposed convolution by scattering: x (N,C,H,W), w (C,F,k,k)."""
    n, c, h, wd = x.shape
    _, f, k, _ = w.shape
    full_h = (h - 1) * stride + k
    full_w = (wd - 1) * stride + k
    out = np.zeros((n, f, full_h + out_pad, full_w + out_pad))
    for i in range(h):
        for j in range(wd):
            out[:, :, i * stride:i * stride + k, j * stride:j * stride + k] += \
                np.einsum("nc,cfkl->nfkl", x[:, :, i, j], w)
    oh = (h - 1) * stride - 2 * pad + k + out_pad
    ow = (wd - 1) * stride - 2 * pad + k + out_pad
    out = out[:, :, pad:pad + oh, pad:pad + ow]
    return out + b.reshape(1, f, 1, 1)
