"""Reverse-mode automatic differentiation over numpy arrays.

Every backward rule is written in terms of differentiable ``Tensor`` ops, so
gradients can themselves be differentiated (``grad(..., create_graph=True)``).
That is what the gradient-penalty term of WGAN-GP needs.
"""

from __future__ import annotations

import contextlib
from functools import lru_cache

import numpy as np

from reprlab.errors import ContractError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def enable_grad(flag: bool = True):
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = flag
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "requires_grad", "_parents", "_backward", "name")

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operators ----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> Tensor:
        return transpose(self, None)

    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> Tensor:
        return mean(self, axis, keepdims)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> Tensor:
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def max(self, axis=None, keepdims: bool = False) -> Tensor:
        return tmax(self, axis, keepdims)

    def argmax(self, axis=None) -> Tensor:
        return argmax(self, axis)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype)
    return Tensor(arr)


def _coerce(a, like: Tensor) -> Tensor:
    if isinstance(a, Tensor):
        return a
    return Tensor(np.asarray(a, dtype=like.dtype))


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    if _grad_enabled and any(p.requires_grad for p in parents):
        out = Tensor(data, requires_grad=True)
        out._parents = parents
        out._backward = backward
        return out
    return Tensor(data)


# -- elementwise ------------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (sum_to(g, a.shape), sum_to(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (sum_to(g, a.shape), sum_to(neg(g), b.shape)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (sum_to(g * b, a.shape), sum_to(g * a, b.shape)))


def div(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        ga = sum_to(g / b, a.shape)
        gb = sum_to(neg(g) * a / (b * b), b.shape)
        return ga, gb

    return _make(a.data / b.data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (neg(g),))


def power(a: Tensor, p: float) -> Tensor:
    p = float(p)
    if p == 2.0:
        return mul(a, a)
    return _make(a.data ** p, (a,), lambda g: (g * (p * power(a, p - 1.0)),))


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def backward(g):
        return (g * out,)

    out = _make(out_data, (a,), backward)
    return out


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: (g / a,))


def sqrt(a: Tensor) -> Tensor:
    out_data = np.sqrt(a.data)

    def backward(g):
        return (g * 0.5 / out,)

    out = _make(out_data, (a,), backward)
    return out


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def backward(g):
        return (g * (1.0 - out * out),)

    out = _make(out_data, (a,), backward)
    return out


def scale_by_mask(a: Tensor, mask: np.ndarray) -> Tensor:
    """Multiply by a constant array; the constant receives no gradient."""
    return _make(a.data * mask, (a,), lambda g: (scale_by_mask(g, mask),))


def relu(a: Tensor) -> Tensor:
    mask = (a.data > 0).astype(a.dtype)
    return scale_by_mask(a, mask)


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    mask = np.where(a.data > 0, 1.0, slope).astype(a.dtype)
    return scale_by_mask(a, mask)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, _coerce(b, a)
    b = as_tensor(b)
    return _coerce(a, b), b


# -- shape ops ------------------------------------------------------------------
def sum_to(g: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Reduce a broadcast result back to ``shape``."""
    if g.shape == tuple(shape):
        return g
    nlead = g.ndim - len(shape)
    axes = tuple(range(nlead)) + tuple(
        i + nlead for i, s in enumerate(shape) if s == 1 and g.shape[i + nlead] != 1)
    data = g.data.sum(axis=axes, keepdims=True) if axes else g.data
    if nlead:
        data = data.reshape(data.shape[nlead:])
    data = data.reshape(shape)
    return _make(data, (g,), lambda gg: (broadcast_to(gg, g.shape),))


def broadcast_to(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    if a.shape == tuple(shape):
        return a
    return _make(np.broadcast_to(a.data, shape).copy(), (a,),
                 lambda g: (sum_to(g, a.shape),))


def reshape(a: Tensor, shape) -> Tensor:
    return _make(a.data.reshape(shape), (a,), lambda g: (reshape(g, a.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (transpose(g, inv),))


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    data = a.data.sum(axis=axes, keepdims=keepdims)
    kept_shape = tuple(1 if i in axes else s for i, s in enumerate(a.shape))

    def backward(g):
        return (broadcast_to(reshape(g, kept_shape), a.shape),)

    return _make(np.asarray(data), (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    count = 1
    for ax in axes:
        count *= a.shape[ax]
    return tsum(a, axes, keepdims) * (1.0 / count)


def tmax(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Max along ``axis``; the gradient goes to the first maximal entry."""
    if axis is None:
        flat = reshape(a, (-1,))
        return tmax(flat, 0, keepdims=False) if not keepdims else reshape(
            tmax(flat, 0), (1,) * a.ndim)
    axis = axis % a.ndim
    idx = np.argmax(a.data, axis=axis)
    mask = np.zeros_like(a.data)
    np.put_along_axis(mask, np.expand_dims(idx, axis), 1.0, axis=axis)
    return tsum(scale_by_mask(a, mask), axis, keepdims)


def argmax(a: Tensor, axis=None) -> Tensor:
    """Index of the maximum (lowest index on ties). Not differentiable."""
    idx = np.argmax(a.data, axis=axis).astype(a.dtype)

    def backward(g):
        raise ContractError("argmax is not differentiable")

    return _make(idx, (a,), backward)


def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim != 2 or b.ndim != 2:
        raise ContractError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")

    def backward(g):
        ga = matmul(g, transpose(b)) if a.requires_grad else None
        gb = matmul(transpose(a), g) if b.requires_grad else None
        return ga, gb

    return _make(a.data @ b.data, (a, b), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(take_slice(g, axis, int(lo), int(hi))
                     for lo, hi in zip(bounds[:-1], bounds[1:]))

    return _make(np.concatenate([t.data for t in tensors], axis=axis),
                 tuple(tensors), backward)


def take_slice(a: Tensor, axis: int, lo: int, hi: int) -> Tensor:
    sl = [slice(None)] * a.ndim
    sl[axis] = slice(lo, hi)
    sl = tuple(sl)

    def backward(g):
        pad = [(0, 0)] * a.ndim
        pad[axis] = (lo, a.shape[axis] - hi)
        return (pad_zeros(g, pad),)

    return _make(a.data[sl], (a,), backward)


def pad_zeros(a: Tensor, pad) -> Tensor:
    pad = [tuple(p) for p in pad]
    sl = tuple(slice(lo, lo + n) for (lo, _), n in zip(pad, a.shape))

    def backward(g):
        return (_crop(g, sl),)

    return _make(np.pad(a.data, pad), (a,), backward)


def _crop(a: Tensor, sl) -> Tensor:
    src_shape = a.shape

    def backward(g):
        pad = [(s.start, n - s.stop) for s, n in zip(sl, src_shape)]
        return (pad_zeros(g, pad),)

    return _make(a.data[sl], (a,), backward)


# -- softmax family -----------------------------------------------------------
def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    shift = Tensor(a.data.max(axis=axis, keepdims=True))
    z = a - shift
    return z - log(tsum(exp(z), axis, keepdims=True))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    return exp(log_softmax(a, axis))


# -- patch extraction (convolutions) -------------------------------------------
@lru_cache(maxsize=64)
def _patch_index(c: int, h: int, w: int, k: int, stride: int, pad: int):
    hp, wp = h + 2 * pad, w + 2 * pad
    oh = (hp - k) // stride + 1
    ow = (wp - k) // stride + 1
    if oh <= 0 or ow <= 0:
        raise ContractError(f"kernel {k} larger than padded input {hp}x{wp}")
    ch, ki, kj = np.meshgrid(np.arange(c), np.arange(k), np.arange(k), indexing="ij")
    patch = (ch * hp * wp + ki * wp + kj).reshape(-1)
    oy, ox = np.meshgrid(np.arange(oh), np.arange(ow), indexing="ij")
    origin = (oy * stride * wp + ox * stride).reshape(-1)
    idx = origin[:, None] + patch[None, :]
    return idx, oh, ow


@lru_cache(maxsize=64)
def _scatter_index(n: int, c: int, h: int, w: int, k: int, stride: int, pad: int) -> np.ndarray:
    idx, _, _ = _patch_index(c, h, w, k, stride, pad)
    plane = c * (h + 2 * pad) * (w + 2 * pad)
    return (np.arange(n)[:, None, None] * plane + idx[None]).reshape(-1)


def im2col(x: Tensor, k: int, stride: int, pad: int) -> Tensor:
    """(N, C, H, W) -> (N, OH*OW, C*k*k) patch matrix."""
    n, c, h, w = x.shape
    idx, _, _ = _patch_index(c, h, w, k, stride, pad)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cols = np.take(xp.reshape(n, -1), idx, axis=1)
    return _make(cols, (x,), lambda g: (col2im(g, (c, h, w), k, stride, pad),))


def col2im(cols: Tensor, chw: tuple[int, int, int], k: int, stride: int, pad: int) -> Tensor:
    """Adjoint of :func:`im2col`: scatter-add patches back onto the image."""
    c, h, w = chw
    n = cols.shape[0]
    hp, wp = h + 2 * pad, w + 2 * pad
    plane = c * hp * wp
    acc = np.bincount(_scatter_index(n, c, h, w, k, stride, pad), weights=cols.data.reshape(-1).astype(np.float64),
                      minlength=n * plane)
    img = acc.reshape(n, c, hp, wp).astype(cols.dtype, copy=False)
    if pad:
        img = img[:, :, pad:pad + h, pad:pad + w]
    img = np.ascontiguousarray(img)
    return _make(img, (cols,), lambda g: (im2col(g, k, stride, pad),))


# -- gradient computation --------------------------------------------------------
def _topo(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def grad(output: Tensor, inputs, grad_output: Tensor | None = None,
         create_graph: bool = False) -> list[Tensor]:
    """Gradients of ``output`` with respect to each tensor in ``inputs``.

    Inputs that ``output`` does not depend on get zero gradients.  With
    ``create_graph`` the returned gradients are themselves differentiable.
    """
    single = isinstance(inputs, Tensor)
    inputs = [inputs] if single else list(inputs)
    if grad_output is None:
        if output.size != 1:
            raise ContractError("grad of a non-scalar output needs grad_output")
        grad_output = Tensor(np.ones_like(output.data))
    wanted = {id(t): i for i, t in enumerate(inputs)}
    result: list[Tensor | None] = [None] * len(inputs)
    if output.requires_grad:
        grads: dict[int, Tensor] = {id(output): grad_output}
        with enable_grad(create_graph):
            for node in reversed(_topo(output)):
                g = grads.pop(id(node), None)
                if g is None:
                    continue
                if id(node) in wanted:
                    result[wanted[id(node)]] = g
                if node._backward is None:
                    continue
                parent_grads = node._backward(g)
                for p, pg in zip(node._parents, parent_grads):
                    if pg is None or not p.requires_grad:
                        continue
                    prev = grads.get(id(p))
                    grads[id(p)] = pg if prev is None else add(prev, pg)
    out = [r if r is not None else Tensor(np.zeros_like(t.data))
           for r, t in zip(result, inputs)]
    return out[0] if single else out
