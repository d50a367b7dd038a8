from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Parameter, Tensor


def grad_check(loss_fn: Callable[[], Tensor], params: Sequence[Parameter], h: float = 1e-5,
               floor: float = 1e-8) -> float:
    """Max over coordinates of |g_bp - g_fd| / max(|g_bp|, |g_fd|, floor).

    ``loss_fn`` must be deterministic: batch norm either in eval mode or
    run on the same frozen batch each call.
    """
    for p in params:
        p.zero_grad()
    loss_fn().backward()
    analytic = [p.grad.copy() for p in params]
    worst = 0.0
    for p, g_bp in zip(params, analytic):
        flat = p.data.reshape(-1)
        gflat = g_bp.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn().item()
            flat[i] = orig - h
            down = loss_fn().item()
            flat[i] = orig
            g_fd = (up - down) / (2 * h)
            err = abs(gflat[i] - g_fd) / max(abs(gflat[i]), abs(g_fd), floor)
            worst = max(worst, err)
    for p in params:
        p.zero_grad()
    return worst
