"""SGD with momentum and L2 weight decay, plus a step learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .tensor import NonFiniteError, Parameter


def sgd_step(params: Sequence[Parameter], lr: float, momentum: float = 0.0,
             weight_decay: float = 0.0) -> None:
    """buf <- momentum*buf + (grad + wd*value); value <- value - lr*buf; grads zeroed.

    The whole step is refused if any gradient is non-finite, so a bad batch
    never leaves parameters half-updated.
    """
    for i, p in enumerate(params):
        if not np.all(np.isfinite(p.grad)):
            bad = int(np.sum(~np.isfinite(p.grad)))
            raise NonFiniteError(f"parameter {p.name or i} has {bad} non-finite gradient entries")
    for p in params:
        d = p.grad + weight_decay * p.data if weight_decay else p.grad
        p.momentum_buf *= momentum
        p.momentum_buf += d
        p.data -= lr * p.momentum_buf
        p.grad = np.zeros_like(p.data)


@dataclass(frozen=True)
class StepSchedule:
    """lr = base * gamma ** (epoch // step); step <= 0 keeps the rate constant."""

    base: float
    step: int = 30
    gamma: float = 0.1

    def __call__(self, epoch: int) -> float:
        if self.step <= 0:
            return self.base
        return self.base * self.gamma ** (epoch // self.step)
