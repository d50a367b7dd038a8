"""Minimal dense-tensor core: reverse-mode autodiff, layers, SGD, gradient checking."""

from . import tensor as ops
from .gradcheck import grad_check
from .io import load_checkpoint, load_tensor, save_checkpoint, save_csv, save_tensor
from .layers import (BatchNorm, Conv1d, Conv2d, Identity, Linear, Module,
                     UninitializedStatistics, batch_norm, linear, make_norm)
from .optim import StepSchedule, sgd_step
from .rng import make_rng
from .tensor import (ContractViolation, NonFiniteError, Parameter, Tensor, l2_normalize,
                     relu, set_debug, sigmoid, tensor)


def cosine_similarity(u, v, eps: float = 1e-12) -> Tensor:
    """u.v / (max(|u|, eps) * max(|v|, eps)) for two vectors of equal length."""
    u, v = tensor(u), tensor(v)
    if u.shape != v.shape or u.ndim != 1 or u.shape[0] < 1:
        raise ContractViolation(f"cosine_similarity: shapes {u.shape} and {v.shape}")
    return (l2_normalize(u, eps=eps) * l2_normalize(v, eps=eps)).sum()


def pairwise_cosine(a, b, eps: float = 1e-12) -> Tensor:
    """Cosine between every row of ``a`` (..., n, d) and every row of ``b`` (m, d)."""
    return ops.matmul(l2_normalize(a, eps=eps), l2_normalize(b, eps=eps).T)


__all__ = [
    "BatchNorm", "Conv1d", "Conv2d", "ContractViolation", "Identity", "Linear", "Module",
    "NonFiniteError", "Parameter", "StepSchedule", "Tensor", "UninitializedStatistics",
    "batch_norm", "cosine_similarity", "grad_check", "l2_normalize", "linear",
    "load_checkpoint", "load_tensor", "make_norm", "make_rng", "ops", "pairwise_cosine",
    "relu", "save_checkpoint", "save_csv", "save_tensor", "set_debug", "sgd_step",
    "sigmoid", "tensor",
]
