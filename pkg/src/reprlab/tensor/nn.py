"""Layer specs, flat parameter storage and the forward pass."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from reprlab.errors import ConfigurationError, ContractError, NumericError
from reprlab.tensor import autodiff as ad
from reprlab.tensor.autodiff import Tensor

LAYER_KINDS = ("dense", "conv2d", "deconv2d", "relu", "leaky-relu", "tanh",
               "batch-norm", "softmax", "reshape")

INIT_STD = 0.01
INIT_BIAS = 0.01
INIT_SCHEMES = ("normal", "fan-in")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    units: int | None = None
    filters: int | None = None
    kernel: int | None = None
    stride: int = 1
    padding: int = 0
    output_padding: int = 0
    slope: float = 0.2
    momentum: float = 0.9
    eps: float = 1e-5
    shape: tuple[int, ...] | None = None

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> LayerSpec:
        d = dict(d)
        kind = d.get("kind")
        if kind not in LAYER_KINDS:
            raise ConfigurationError(f"unknown layer kind {kind!r}")
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigurationError(f"unknown layer fields {sorted(extra)} for {kind}")
        if "shape" in d and d["shape"] is not None:
            d["shape"] = tuple(int(s) for s in d["shape"])
        return cls(**d)

    def to_dict(self) -> dict[str, Any]:
        base = LayerSpec(kind=self.kind)
        out: dict[str, Any] = {"kind": self.kind}
        for name in self.__dataclass_fields__:
            val = getattr(self, name)
            if name != "kind" and val != getattr(base, name):
                out[name] = list(val) if isinstance(val, tuple) else val
        return out


@dataclass(frozen=True)
class NetworkSpec:
    """Input shape, layer stack and weight init scheme.

    ``init="normal"`` draws every weight from N(0, 0.01) truncated at two
    standard deviations; ``init="fan-in"`` uses the same truncated normal
    with std sqrt(2 / fan_in) per layer, which small desk-scale networks
    need for the input signal to survive the stack.
    """
    input_shape: tuple[int, ...]
    layers: tuple[LayerSpec, ...]
    init: str = "normal"

    def __post_init__(self):
        if self.init not in INIT_SCHEMES:
            raise ConfigurationError(f"init must be one of {INIT_SCHEMES}, got {self.init!r}")

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> NetworkSpec:
        try:
            shape = tuple(int(s) for s in d["input_shape"])
            layers = tuple(LayerSpec.from_dict(l) for l in d["layers"])
        except KeyError as exc:
            raise ConfigurationError(f"network spec missing {exc}") from None
        return cls(shape, layers, str(d.get("init", "normal")))

    def to_dict(self) -> dict[str, Any]:
        out = {"input_shape": list(self.input_shape),
               "layers": [l.to_dict() for l in self.layers]}
        if self.init != "normal":
            out["init"] = self.init
        return out


@dataclass(frozen=True)
class Segment:
    name: str
    shape: tuple[int, ...]
    offset: int

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))


def layout_id(segments) -> str:
    h = hashlib.sha1()
    for s in segments:
        h.update(f"{s.name}:{'x'.join(map(str, s.shape))};".encode())
    return h.hexdigest()[:16]


class NetworkParams:
    """A flat parameter vector split into named, shaped segments.

    Non-trainable state (batch-norm running statistics) lives in ``buffers``.
    """

    def __init__(self, segments, flat: np.ndarray, buffers: dict[str, np.ndarray] | None = None):
        self.segments: tuple[Segment, ...] = tuple(segments)
        total = sum(s.size for s in self.segments)
        if flat.ndim != 1 or flat.size != total:
            raise ContractError(f"flat vector of size {flat.size} does not fit layout of {total}")
        self.flat = flat
        self.buffers = buffers if buffers is not None else {}
        self._index = {s.name: s for s in self.segments}

    @property
    def layout_id(self) -> str:
        return layout_id(self.segments)

    @property
    def dtype(self):
        return self.flat.dtype

    def __len__(self) -> int:
        return self.flat.size

    def __getitem__(self, name: str) -> np.ndarray:
        s = self._index[name]
        return self.flat[s.offset:s.offset + s.size].reshape(s.shape)

    def names(self) -> list[str]:
        return [s.name for s in self.segments]

    def copy(self) -> NetworkParams:
        return NetworkParams(self.segments, self.flat.copy(),
                             {k: v.copy() for k, v in self.buffers.items()})

    def with_flat(self, flat: np.ndarray) -> NetworkParams:
        return NetworkParams(self.segments, flat, {k: v.copy() for k, v in self.buffers.items()})

    def zeros_like(self) -> NetworkParams:
        return NetworkParams(self.segments, np.zeros_like(self.flat))

    def check_compatible(self, other: NetworkParams) -> None:
        if self.layout_id != other.layout_id:
            raise ContractError(f"layout mismatch: {self.layout_id} vs {other.layout_id}")

    def leaves(self) -> dict[str, Tensor]:
        """Differentiable views of every segment."""
        return {s.name: Tensor(self[s.name], requires_grad=True, name=s.name)
                for s in self.segments}

    def gather(self, grads: Mapping[str, Tensor]) -> NetworkParams:
        flat = np.zeros_like(self.flat)
        for s in self.segments:
            g = grads.get(s.name)
            if g is not None:
                flat[s.offset:s.offset + s.size] = g.data.reshape(-1)
        return NetworkParams(self.segments, flat)

    def equal(self, other: NetworkParams) -> bool:
        if self.layout_id != other.layout_id or self.dtype != other.dtype:
            return False
        if not np.array_equal(self.flat, other.flat):
            return False
        if self.buffers.keys() != other.buffers.keys():
            return False
        return all(np.array_equal(v, other.buffers[k]) for k, v in self.buffers.items())


def truncated_normal(rng: np.random.Generator, shape, std: float = INIT_STD) -> np.ndarray:
    """Normal(0, std) samples; anything beyond two std is re-drawn."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out


@dataclass
class _Compiled:
    spec: LayerSpec
    name: str
    in_shape: tuple[int, ...]
    out_shape: tuple[int, ...]
    params: list[tuple[str, tuple[int, ...]]] = field(default_factory=list)


class Network:
    """A feed-forward stack built from a :class:`NetworkSpec`."""

    def __init__(self, spec: NetworkSpec):
        self.spec = spec
        self.layers: list[_Compiled] = []
        shape = tuple(spec.input_shape)
        for i, ls in enumerate(spec.layers):
            name = f"l{i}_{ls.kind.replace('-', '_')}"
            layer = _compile(ls, name, shape)
            self.layers.append(layer)
            shape = layer.out_shape
        self.input_shape = tuple(spec.input_shape)
        self.output_shape = shape
        segs, off = [], 0
        for layer in self.layers:
            for pname, pshape in layer.params:
                segs.append(Segment(f"{layer.name}.{pname}", pshape, off))
                off += int(np.prod(pshape))
        self.segments = tuple(segs)

    @property
    def layout_id(self) -> str:
        return layout_id(self.segments)

    def num_params(self) -> int:
        return sum(s.size for s in self.segments)

    def init(self, rng: np.random.Generator, dtype=np.float64) -> NetworkParams:
        flat = np.empty(self.num_params(), dtype=np.float64)
        for s in self.segments:
            pname = s.name.split(".")[-1]
            if pname == "W":
                std = INIT_STD if self.spec.init == "normal" else math.sqrt(2.0 / _fan_in(s.name, s.shape))
                vals = truncated_normal(rng, s.shape, std)
            elif pname == "b":
                vals = np.full(s.shape, INIT_BIAS)
            elif pname == "gamma":
                vals = np.ones(s.shape)
            else:
                vals = np.zeros(s.shape)
            flat[s.offset:s.offset + s.size] = vals.reshape(-1)
        buffers = {}
        for layer in self.layers:
            if layer.spec.kind == "batch-norm":
                c = layer.params[0][1][0]
                buffers[f"{layer.name}.running_mean"] = np.zeros(c, dtype=dtype)
                buffers[f"{layer.name}.running_var"] = np.ones(c, dtype=dtype)
        return NetworkParams(self.segments, flat.astype(dtype), buffers)

    def apply(self, params, x, *, training: bool = False, check_finite: bool = True) -> Tensor:
        """Evaluate the network.

        ``params`` is either a :class:`NetworkParams` (treated as constants) or
        the ``(params, leaves)`` pair returned by :func:`differentiable` when
        gradients with respect to the parameters are wanted.
        """
        if isinstance(params, tuple):
            store, leaves = params
        else:
            store, leaves = params, None
        if store.layout_id != self.layout_id:
            raise ContractError(f"parameters with layout {store.layout_id} do not fit this network")
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=store.dtype))
        if tuple(x.shape[1:]) != self.input_shape:
            raise ConfigurationError(
                f"input shape {tuple(x.shape[1:])} does not match network input {self.input_shape}")

        def p(layer, pname):
            key = f"{layer.name}.{pname}"
            if leaves is not None:
                return leaves[key]
            return Tensor(store[key])

        h = x
        for layer in self.layers:
            h = _forward_layer(layer, h, p, store.buffers, training)
            if check_finite and not np.all(np.isfinite(h.data)):
                raise NumericError(f"non-finite output in layer {layer.name}")
        return h


def differentiable(params: NetworkParams):
    """Pair ``params`` with fresh leaf tensors for :meth:`Network.apply`."""
    return params, params.leaves()


def forward(net: Network, params: NetworkParams, x, training: bool = False) -> Tensor:
    return net.apply(params, x, training=training)


def backward(loss: Tensor, params, *, create_graph: bool = False) -> NetworkParams:
    """Gradient of scalar ``loss`` w.r.t. the leaves in ``params``.

    ``params`` is the pair produced by :func:`differentiable`; the result has
    the parameter layout, with zeros for parameters off the loss path.
    """
    store, leaves = params
    if loss.size != 1:
        raise ContractError("loss must be a scalar")
    names = list(leaves)
    gs = ad.grad(loss, [leaves[n] for n in names], create_graph=create_graph)
    return store.gather(dict(zip(names, gs)))


def value_and_grad(fn, params: NetworkParams) -> tuple[float, NetworkParams]:
    """Evaluate ``fn((params, leaves))`` and its parameter gradient."""
    pair = differentiable(params)
    loss = fn(pair)
    if not np.isfinite(loss.data).all():
        raise NumericError(f"non-finite loss {loss.item()}")
    return loss.item(), backward(loss, pair)


def _fan_in(name: str, shape: tuple[int, ...]) -> int:
    if len(shape) == 2:                 # dense (in, out)
        return shape[0]
    if "deconv2d" in name:              # (in, out, k, k)
        return int(np.prod(shape)) // shape[1]
    return int(np.prod(shape)) // shape[0]   # conv (out, in, k, k)


def _compile(ls: LayerSpec, name: str, shape: tuple[int, ...]) -> _Compiled:
    kind = ls.kind
    if kind == "dense":
        if not ls.units or ls.units <= 0:
            raise ConfigurationError(f"{name}: dense layer needs positive units")
        fan_in = int(np.prod(shape))
        return _Compiled(ls, name, shape, (ls.units,),
                         [("W", (fan_in, ls.units)), ("b", (ls.units,))])
    if kind in ("conv2d", "deconv2d"):
        if len(shape) != 3:
            raise ConfigurationError(f"{name}: {kind} needs (C, H, W) input, got {shape}")
        if not ls.filters or not ls.kernel:
            raise ConfigurationError(f"{name}: {kind} needs filters and kernel")
        c, h, w = shape
        k, s, p = ls.kernel, ls.stride, ls.padding
        if kind == "conv2d":
            oh = (h + 2 * p - k) // s + 1
            ow = (w + 2 * p - k) // s + 1
            if oh <= 0 or ow <= 0:
                raise ConfigurationError(f"{name}: kernel {k} too large for input {shape}")
            return _Compiled(ls, name, shape, (ls.filters, oh, ow),
                             [("W", (ls.filters, c, k, k)), ("b", (ls.filters,))])
        oh = (h - 1) * s + k - 2 * p + ls.output_padding
        ow = (w - 1) * s + k - 2 * p + ls.output_padding
        if ls.output_padding >= s:
            raise ConfigurationError(f"{name}: output_padding must be smaller than stride")
        if (oh + 2 * p - k) // s + 1 != h or oh <= 0:
            raise ConfigurationError(f"{name}: inconsistent deconv geometry for input {shape}")
        return _Compiled(ls, name, shape, (ls.filters, oh, ow),
                         [("W", (c, ls.filters, k, k)), ("b", (ls.filters,))])
    if kind == "batch-norm":
        return _Compiled(ls, name, shape, shape, [("gamma", (shape[0],)), ("beta", (shape[0],))])
    if kind == "reshape":
        if ls.shape is None or math.prod(ls.shape) != math.prod(shape):
            raise ConfigurationError(f"{name}: cannot reshape {shape} to {ls.shape}")
        return _Compiled(ls, name, shape, tuple(ls.shape))
    if kind == "softmax" and len(shape) != 1:
        raise ConfigurationError(f"{name}: softmax expects a flat input")
    return _Compiled(ls, name, shape, shape)


def _forward_layer(layer: _Compiled, h: Tensor, p, buffers, training: bool) -> Tensor:
    ls = layer.spec
    kind = ls.kind
    n = h.shape[0]
    if kind == "dense":
        if h.ndim != 2:
            h = h.reshape(n, -1)
        return h @ p(layer, "W") + p(layer, "b")
    if kind == "conv2d":
        c, hh, ww = layer.in_shape
        f, oh, ow = layer.out_shape
        cols = ad.im2col(h, ls.kernel, ls.stride, ls.padding)
        wmat = p(layer, "W").reshape(f, -1)
        out = cols.reshape(n * oh * ow, -1) @ wmat.T
        out = out.reshape(n, oh * ow, f).transpose(0, 2, 1).reshape(n, f, oh, ow)
        return out + p(layer, "b").reshape(1, f, 1, 1)
    if kind == "deconv2d":
        c, hh, ww = layer.in_shape
        f, oh, ow = layer.out_shape
        k = ls.kernel
        x2 = h.reshape(n, c, hh * ww).transpose(0, 2, 1).reshape(n * hh * ww, c)
        cols = (x2 @ p(layer, "W").reshape(c, f * k * k)).reshape(n, hh * ww, f * k * k)
        out = ad.col2im(cols, (f, oh, ow), k, ls.stride, ls.padding)
        return out + p(layer, "b").reshape(1, f, 1, 1)
    if kind == "relu":
        return ad.relu(h)
    if kind == "leaky-relu":
        return ad.leaky_relu(h, ls.slope)
    if kind == "tanh":
        return ad.tanh(h)
    if kind == "softmax":
        return ad.softmax(h, axis=-1)
    if kind == "reshape":
        return h.reshape((n,) + tuple(ls.shape))
    if kind == "batch-norm":
        return _batch_norm(layer, h, p, buffers, training)
    raise ConfigurationError(f"unsupported layer kind {kind}")


def _batch_norm(layer: _Compiled, h: Tensor, p, buffers, training: bool) -> Tensor:
    ls = layer.spec
    c = layer.in_shape[0]
    axes = (0,) if h.ndim == 2 else (0, 2, 3)
    bshape = (1, c) if h.ndim == 2 else (1, c, 1, 1)
    rm_key, rv_key = f"{layer.name}.running_mean", f"{layer.name}.running_var"
    if training:
        mu = h.mean(axes, keepdims=True)
        centered = h - mu
        var = (centered * centered).mean(axes, keepdims=True)
        xhat = centered / ad.sqrt(var + ls.eps)
        m = ls.momentum
        buffers[rm_key] = m * buffers[rm_key] + (1 - m) * mu.data.reshape(c)
        buffers[rv_key] = m * buffers[rv_key] + (1 - m) * var.data.reshape(c)
    else:
        mu = buffers[rm_key].reshape(bshape)
        var = buffers[rv_key].reshape(bshape)
        xhat = (h - mu) * (1.0 / np.sqrt(var + ls.eps))
    return xhat * p(layer, "gamma").reshape(bshape) + p(layer, "beta").reshape(bshape)
