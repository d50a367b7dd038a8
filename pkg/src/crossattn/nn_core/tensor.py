"""Dense float64 tensors with reverse-mode differentiation.

Every op builds a node holding its output array, its parent tensors and a
closure mapping the output gradient to per-parent gradients. ``backward``
walks the graph in reverse topological order and accumulates into ``.grad``
of every leaf that requires it.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

_DEBUG = False


class ContractViolation(ValueError):
    """Raised when an op receives operands with incompatible shapes."""


class NonFiniteError(FloatingPointError):
    """Raised when NaN/Inf shows up where finite values are required."""


def set_debug(flag: bool) -> None:
    """Enable post-op finiteness checks on every intermediate result."""
    global _DEBUG
    _DEBUG = bool(flag)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple = (), _backward: Callable | None = None, _derived: bool = False):
        arr = np.array(data, dtype=np.float64) if not isinstance(data, np.ndarray) \
            else data.astype(np.float64, copy=False)
        if not (_parents or _derived) and not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"non-finite values in tensor {name or ''}".strip())
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.name = name

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    # -- autodiff ------------------------------------------------------
    def backward(self, grad=None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ContractViolation("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                grads[key] = pg if key not in grads else grads[key] + pg

    # -- operators -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p: float):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


class Parameter(Tensor):
    """A learnable leaf: value plus gradient and momentum buffers of the same shape."""

    __slots__ = ("momentum_buf",)

    def __init__(self, data, name: str | None = None):
        super().__init__(data, requires_grad=True, name=name)
        self.data = self.data.copy()
        self.grad = np.zeros_like(self.data)
        self.momentum_buf = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    @property
    def value(self) -> np.ndarray:
        return self.data


def tensor(data, requires_grad: bool = False) -> Tensor:
    return data if isinstance(data, Tensor) else Tensor(data, requires_grad=requires_grad)


def _make(out: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    if _DEBUG and not np.all(np.isfinite(out)):
        raise NonFiniteError("op produced non-finite output")
    if any(p.requires_grad for p in parents):
        return Tensor(out, requires_grad=True, _parents=tuple(parents), _backward=backward)
    return Tensor(out, _derived=True)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ContractViolation(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from exc


# -- elementwise binary -------------------------------------------------

def add(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    _check_broadcast(a.data, b.data, "add")
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    _check_broadcast(a.data, b.data, "sub")
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    _check_broadcast(a.data, b.data, "mul")
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    _check_broadcast(a.data, b.data, "div")
    ad, bd = a.data, b.data
    out = ad / bd

    def backward(g):
        return (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape))

    return _make(out, (a, b), backward)


def matmul(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ContractViolation(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    ad, bd = a.data, b.data
    out = ad @ bd

    def backward(g):
        if bd.ndim == 2:
            ga = g @ bd.T
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            return ga, gb
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _make(out, (a, b), backward)


# -- elementwise unary --------------------------------------------------

def relu(x) -> Tensor:
    x = tensor(x)
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x) -> Tensor:
    x = tensor(x)
    e = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),))


def exp(x) -> Tensor:
    x = tensor(x)
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,))


def log(x) -> Tensor:
    x = tensor(x)
    xd = x.data
    return _make(np.log(xd), (x,), lambda g: (g / xd,))


def sqrt(x) -> Tensor:
    x = tensor(x)
    out = np.sqrt(x.data)
    return _make(out, (x,), lambda g: (g * 0.5 / out,))


def power(x, p: float) -> Tensor:
    x = tensor(x)
    xd = x.data
    return _make(xd ** p, (x,), lambda g: (g * p * xd ** (p - 1),))


def clip(x, lo: float, hi: float) -> Tensor:
    """Clamp into [lo, hi]; gradient passes only where the value was inside."""
    x = tensor(x)
    inside = (x.data >= lo) & (x.data <= hi)
    return _make(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))


def where(cond: np.ndarray, x, y) -> Tensor:
    """Select between two tensors with a constant boolean mask."""
    x, y = tensor(x), tensor(y)
    cond = np.asarray(cond, dtype=bool)
    sx, sy = x.shape, y.shape
    out = np.where(cond, x.data, y.data)
    return _make(out, (x, y), lambda g: (_unbroadcast(np.where(cond, g, 0.0), sx),
                                         _unbroadcast(np.where(cond, 0.0, g), sy)))


def l2_normalize(x, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """x / max(||x||, eps) along ``axis``."""
    x = tensor(x)
    norm = np.sqrt(np.sum(x.data * x.data, axis=axis, keepdims=True))
    big = norm > eps
    denom = np.where(big, norm, eps)
    out = x.data / denom

    def backward(g):
        proj = np.sum(out * g, axis=axis, keepdims=True)
        return (np.where(big, (g - out * proj) / denom, g / eps),)

    return _make(out, (x,), backward)


# -- reductions and shape ops --------------------------------------------

def sum_(x, axis=None, keepdims: bool = False) -> Tensor:
    x = tensor(x)
    shape = x.shape
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(out, dtype=np.float64), (x,), backward)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = tensor(x)
    if axis is None:
        n = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = math.prod(x.shape[a] for a in axes)
    return sum_(x, axis, keepdims) * (1.0 / n)


def reshape(x, shape) -> Tensor:
    x = tensor(x)
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ContractViolation(f"reshape: cannot view {old} as {shape}") from exc
    return _make(out, (x,), lambda g: (g.reshape(old),))


def transpose(x, axes=None) -> Tensor:
    x = tensor(x)
    out = np.transpose(x.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return _make(out, (x,), lambda g: (np.transpose(g, inv),))


def getitem(x, index) -> Tensor:
    x = tensor(x)
    shape = x.shape

    def backward(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return _make(np.array(x.data[index]), (x,), backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [tensor(t) for t in tensors]
    out = np.stack([t.data for t in ts], axis=axis)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return _make(out, ts, backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    cuts = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _make(out, ts, backward)


# -- padding, convolution, pooling ----------------------------------------

def pad_edge_time(x, p: int) -> Tensor:
    """Replicate the first/last step ``p`` times along axis 1 of a B x T x C tensor."""
    x = tensor(x)
    if p == 0:
        return x
    out = np.concatenate([np.repeat(x.data[:, :1], p, axis=1), x.data,
                          np.repeat(x.data[:, -1:], p, axis=1)], axis=1)

    def backward(g):
        gx = g[:, p:-p].copy()
        gx[:, 0] += g[:, :p].sum(axis=1)
        gx[:, -1] += g[:, -p:].sum(axis=1)
        return (gx,)

    return _make(out, (x,), backward)


def conv2d(x, w, b=None, stride: int = 1, padding: int = 0) -> Tensor:
    """NHWC convolution; ``w`` has shape kh x kw x C_in x C_out."""
    x, w = tensor(x), tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[3] != w.shape[2]:
        raise ContractViolation(f"conv2d: input {x.shape} vs kernel {w.shape}")
    B, H, W, C = x.shape
    kh, kw, _, co = w.shape
    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    Ho = (H + 2 * padding - kh) // stride + 1
    Wo = (W + 2 * padding - kw) // stride + 1
    if Ho < 1 or Wo < 1:
        raise ContractViolation(f"conv2d: input {H}x{W} too small for kernel {kh}x{kw}")
    sb, sh, sw, sc = xp.strides
    cols = np.lib.stride_tricks.as_strided(
        xp, (B, Ho, Wo, kh, kw, C), (sb, sh * stride, sw * stride, sh, sw, sc), writeable=False)
    cols2 = cols.reshape(B * Ho * Wo, kh * kw * C)
    wd = w.data.reshape(kh * kw * C, co)
    out = (cols2 @ wd).reshape(B, Ho, Wo, co)
    parents = [x, w]
    if b is not None:
        b = tensor(b)
        out = out + b.data
        parents.append(b)

    def backward(g):
        g2 = g.reshape(-1, co)
        gw = (cols2.T @ g2).reshape(w.shape)
        gcols = (g2 @ wd.T).reshape(B, Ho, Wo, kh, kw, C)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, i:i + stride * Ho:stride, j:j + stride * Wo:stride, :] += gcols[:, :, :, i, j, :]
        gx = gxp[:, padding:padding + H, padding:padding + W, :]
        grads = [gx, gw]
        if b is not None:
            grads.append(g2.sum(axis=0))
        return tuple(grads)

    return _make(out, parents, backward)


def conv1d(x, w, b=None) -> Tensor:
    """Valid 1-D convolution over axis 1 of B x T x C; ``w`` is k x C_in x C_out."""
    x, w = tensor(x), tensor(w)
    if x.ndim != 3 or w.ndim != 3 or x.shape[2] != w.shape[1]:
        raise ContractViolation(f"conv1d: input {x.shape} vs kernel {w.shape}")
    B, T, C = x.shape
    k, _, co = w.shape
    To = T - k + 1
    if To < 1:
        raise ContractViolation(f"conv1d: {T} steps too short for kernel {k}")
    xd = np.ascontiguousarray(x.data)
    sb, st, sc = xd.strides
    cols = np.lib.stride_tricks.as_strided(xd, (B, To, k, C), (sb, st, st, sc), writeable=False)
    cols2 = cols.reshape(B * To, k * C)
    wd = w.data.reshape(k * C, co)
    out = (cols2 @ wd).reshape(B, To, co)
    parents = [x, w]
    if b is not None:
        b = tensor(b)
        out = out + b.data
        parents.append(b)

    def backward(g):
        g2 = g.reshape(-1, co)
        gw = (cols2.T @ g2).reshape(w.shape)
        gcols = (g2 @ wd.T).reshape(B, To, k, C)
        gx = np.zeros_like(xd)
        for i in range(k):
            gx[:, i:i + To, :] += gcols[:, :, i, :]
        grads = [gx, gw]
        if b is not None:
            grads.append(g2.sum(axis=0))
        return tuple(grads)

    return _make(out, parents, backward)


def avg_pool1d(x, pool: int) -> Tensor:
    """Average pooling over axis 1 with ceil division; a short last window averages what it has."""
    x = tensor(x)
    B, T, C = x.shape
    To = -(-T // pool)
    padded = np.zeros((B, To * pool, C))
    padded[:, :T] = x.data
    counts = np.full(To, float(pool))
    counts[-1] = T - (To - 1) * pool
    out = padded.reshape(B, To, pool, C).sum(axis=2) / counts[None, :, None]

    def backward(g):
        gg = np.repeat(g / counts[None, :, None], pool, axis=1)
        return (gg[:, :T],)

    return _make(out, (x,), backward)


def avg_pool2d(x, pool: int = 2) -> Tensor:
    """Non-overlapping average pooling of an NHWC tensor whose H, W are multiples of ``pool``."""
    x = tensor(x)
    B, H, W, C = x.shape
    if H % pool or W % pool:
        raise ContractViolation(f"avg_pool2d: {H}x{W} not divisible by {pool}")
    out = x.data.reshape(B, H // pool, pool, W // pool, pool, C).mean(axis=(2, 4))

    def backward(g):
        gg = np.repeat(np.repeat(g, pool, axis=1), pool, axis=2) / (pool * pool)
        return (gg,)

    return _make(out, (x,), backward)

