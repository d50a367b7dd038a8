"""Module containers and the layers every model in the package is built from."""

from __future__ import annotations

import warnings
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import ContractViolation, Parameter, Tensor


class UninitializedStatistics(RuntimeError):
    """Eval-mode batch norm was asked to run before any train-mode pass."""


class Module:
    training: bool = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def _children(self) -> Iterator[tuple[str, object]]:
        for name, value in vars(self).items():
            if isinstance(value, (Parameter, Module)):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Parameter, Module)):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, child in self._children():
            if isinstance(child, Parameter):
                yield prefix + name, child
            else:
                yield from child.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, child in self._children():
            if isinstance(child, Module):
                yield from child.named_buffers(prefix + name + ".")

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, child in self._children():
            if isinstance(child, Module):
                yield from child.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update({name: buf.copy() for name, buf in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        expected = set(params) | {n for n, _ in self.named_buffers()}
        missing = expected - set(state)
        if missing:
            raise KeyError(f"state is missing entries: {sorted(missing)}")
        for name, p in params.items():
            if state[name].shape != p.data.shape:
                raise ContractViolation(f"{name}: stored {state[name].shape} vs model {p.data.shape}")
            p.data[...] = state[name]
        for m_prefix, bn in self._batch_norms():
            bn.load_buffers({k[len(m_prefix):]: v for k, v in state.items() if k.startswith(m_prefix)})

    def _batch_norms(self, prefix: str = "") -> Iterator[tuple[str, "BatchNorm"]]:
        for name, child in self._children():
            if isinstance(child, BatchNorm):
                yield prefix + name + ".", child
            elif isinstance(child, Module):
                yield from child._batch_norms(prefix + name + ".")


def uniform_init(rng: np.random.Generator, fan_in: int, shape: tuple) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def linear(x, W, b=None) -> Tensor:
    """y = x W + b over the last axis of ``x``."""
    x = T.tensor(x)
    if W.ndim != 2 or x.shape[-1] != W.shape[0]:
        raise ContractViolation(f"linear: input {x.shape} vs weight {W.shape}")
    if b is not None and b.shape != (W.shape[1],):
        raise ContractViolation(f"linear: bias {b.shape} vs weight {W.shape}")
    y = T.matmul(x, W)
    return y if b is None else y + b


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = Parameter(uniform_init(rng, d_in, (d_in, d_out)))
        self.bias = Parameter(np.zeros(d_out)) if bias else None

    def forward(self, x) -> Tensor:
        return linear(x, self.weight, self.bias)


def batch_norm(x, gamma, beta, state: "BatchNorm | None", training: bool,
               eps: float = 1e-5, momentum: float = 0.9) -> Tensor:
    """Normalize over every axis but the last.

    In training mode batch statistics are used and, when ``state`` is given,
    folded into its running estimates as ``running = momentum * running +
    (1 - momentum) * batch``. The first training pass seeds the running values.
    """
    x = T.tensor(x)
    D = x.shape[-1]
    flat = T.reshape(x, (-1, D))
    n = flat.shape[0]
    if training:
        if n == 1:
            warnings.warn("batch_norm with a single sample: output collapses to beta", RuntimeWarning)
        mu = flat.mean(axis=0)
        centered = flat - mu
        var = (centered * centered).mean(axis=0)
        if state is not None:
            state.update(mu.data, var.data, momentum)
        xhat = centered / T.sqrt(var + eps)
    else:
        if state is None or not state.initialized:
            raise UninitializedStatistics("batch_norm in eval mode before any training pass")
        xhat = (flat - state.running_mean) / np.sqrt(state.running_var + eps)
    out = xhat * gamma + beta
    return T.reshape(out, x.shape)


class BatchNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5, momentum: float = 0.9):
        self.gamma = Parameter(np.ones(dim))
        self.beta = Parameter(np.zeros(dim))
        self.eps = eps
        self.momentum = momentum
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)
        self.initialized = False
        # when set, the next train pass overwrites running stats with batch stats
        self.refresh = False

    def update(self, mu: np.ndarray, var: np.ndarray, momentum: float) -> None:
        if not self.initialized or self.refresh:
            self.running_mean = mu.copy()
            self.running_var = var.copy()
            self.initialized = True
            return
        self.running_mean = momentum * self.running_mean + (1 - momentum) * mu
        self.running_var = momentum * self.running_var + (1 - momentum) * var

    def forward(self, x) -> Tensor:
        return batch_norm(x, self.gamma, self.beta, self, self.training, self.eps, self.momentum)

    def named_buffers(self, prefix: str = ""):
        yield prefix + "running_mean", self.running_mean
        yield prefix + "running_var", self.running_var
        yield prefix + "initialized", np.array([float(self.initialized)])

    def load_buffers(self, bufs: dict[str, np.ndarray]) -> None:
        self.running_mean = bufs["running_mean"].copy()
        self.running_var = bufs["running_var"].copy()
        self.initialized = bool(bufs["initialized"][0])


class Identity(Module):
    def forward(self, x):
        return x


def make_norm(kind: str, dim: int) -> Module:
    if kind == "bn":
        return BatchNorm(dim)
    if kind == "none":
        return Identity()
    raise ValueError(f"unknown norm kind {kind!r} (expected 'bn' or 'none')")


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator,
                 stride: int = 1, padding: int | None = None):
        self.weight = Parameter(uniform_init(rng, k * k * c_in, (k, k, c_in, c_out)))
        self.bias = Parameter(np.zeros(c_out))
        self.stride = stride
        self.padding = k // 2 if padding is None else padding

    def forward(self, x) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class Conv1d(Module):
    """Same-length 1-D convolution with replicated edges (keeps constant signals constant)."""

    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator):
        if k % 2 == 0:
            raise ValueError("Conv1d needs an odd kernel size")
        self.weight = Parameter(uniform_init(rng, k * c_in, (k, c_in, c_out)))
        self.bias = Parameter(np.zeros(c_out))
        self.k = k

    def forward(self, x) -> Tensor:
        return T.conv1d(T.pad_edge_time(x, self.k // 2), self.weight, self.bias)
