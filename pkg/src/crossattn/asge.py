"""Label embeddings whose pairwise cosines reproduce the symmetrized co-occurrence graph."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .nn_core import (BatchNorm, Linear, Module, NonFiniteError, Tensor, make_norm, make_rng,
                      pairwise_cosine, relu, sgd_step)
from .nn_core.io import save_csv, save_tensor

log = logging.getLogger(__name__)


@dataclass
class AsgeConfig:
    hidden: tuple[int, ...] = (256, 256)
    dim: int = 256
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0
    epochs: int = 1000
    alpha: float | None = None
    seed: int = 0
    norm: str = "bn"

    def __post_init__(self):
        if self.alpha is not None and not 0.0 <= self.alpha < 1.0:
            raise ValueError(f"alpha must lie in [0, 1), got {self.alpha}")
        if len(self.hidden) != 2:
            raise ValueError("the embedding network takes exactly two hidden widths")


class AsgeNetwork(Module):
    """one-hot -> FC-BN-ReLU -> FC-BN-ReLU -> FC."""

    def __init__(self, num_labels: int, hidden: tuple[int, ...], dim: int,
                 rng: np.random.Generator, norm: str = "bn"):
        h1, h2 = hidden
        self.num_labels = num_labels
        self.dim = dim
        self.fc1 = Linear(num_labels, h1, rng)
        self.norm1 = make_norm(norm, h1)
        self.fc2 = Linear(h1, h2, rng)
        self.norm2 = make_norm(norm, h2)
        self.fc3 = Linear(h2, dim, rng)

    def forward(self, onehots) -> Tensor:
        x = relu(self.norm1(self.fc1(onehots)))
        x = relu(self.norm2(self.fc2(x)))
        return self.fc3(x)


def forward_embeddings(net: AsgeNetwork, order: np.ndarray | None = None) -> Tensor:
    """Row i is the embedding of label ``order[i]`` (identity order by default); one batch."""
    eye = np.eye(net.num_labels)
    if order is not None:
        eye = eye[np.asarray(order)]
    return net(Tensor(eye))


def relaxation_gate(cos: np.ndarray, A_sym: np.ndarray, alpha: float | None) -> np.ndarray:
    """sigma_ij: 0 where both the target and the current cosine fall below alpha."""
    if alpha is None:
        return np.ones_like(A_sym, dtype=np.float64)
    return np.where((A_sym < alpha) & (cos < alpha), 0.0, 1.0)


def asge_loss(E, A_sym: np.ndarray, alpha: float | None = None,
              include: np.ndarray | None = None, eps: float = 1e-12) -> Tensor:
    """sum_ij sigma_ij (cos(e_i, e_j) - A'_ij)^2 over all ordered pairs.

    The gate is evaluated on the current cosines and held constant, so a
    gated pair contributes neither loss nor gradient. ``include`` is an extra
    0/1 mask for restricting the sum to selected pairs.
    """
    A_sym = np.asarray(A_sym, dtype=np.float64)
    cos = pairwise_cosine(E, E, eps)
    if cos.shape != A_sym.shape:
        raise ValueError(f"embeddings give {cos.shape} pairs, graph has {A_sym.shape}")
    weight = relaxation_gate(cos.data, A_sym, alpha)
    if include is not None:
        weight = weight * include
    resid = cos - A_sym
    return (resid * resid * weight).sum()


def relaxed_asge_loss(E, A_sym: np.ndarray, alpha: float, **kw) -> Tensor:
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"alpha must lie in [0, 1), got {alpha}")
    return asge_loss(E, A_sym, alpha, **kw)


@dataclass
class AsgeResult:
    embeddings: np.ndarray
    network: AsgeNetwork
    losses: list[float] = field(default_factory=list)
    relaxed_fraction: list[float] = field(default_factory=list)


def _freeze_statistics(net: AsgeNetwork) -> None:
    # The full label set is the whole dataset, so population stats are the batch stats.
    bns = [m for m in net.modules() if isinstance(m, BatchNorm)]
    for bn in bns:
        bn.refresh = True
    net.train()
    forward_embeddings(net)
    for bn in bns:
        bn.refresh = False
    net.eval()


def train_asge(A_sym: np.ndarray, cfg: AsgeConfig) -> AsgeResult:
    """Full-batch SGD on the (optionally relaxed) embedding loss.

    Returns eval-mode embeddings together with per-epoch loss and the
    fraction of pairs the relaxation gate dropped.
    """
    A_sym = np.asarray(A_sym, dtype=np.float64)
    n = A_sym.shape[0]
    net = AsgeNetwork(n, tuple(cfg.hidden), cfg.dim, make_rng(cfg.seed, 1), cfg.norm)
    params = net.parameters()
    losses, fractions = [], []
    net.train()
    for epoch in range(cfg.epochs):
        E = forward_embeddings(net)
        loss = asge_loss(E, A_sym, cfg.alpha)
        value = loss.item()
        if not np.isfinite(value):
            raise NonFiniteError(f"embedding loss diverged at epoch {epoch}: {value}")
        gate = relaxation_gate(pairwise_cosine(E, E).data, A_sym, cfg.alpha)
        losses.append(value)
        fractions.append(float(1.0 - gate.mean()))
        loss.backward()
        sgd_step(params, cfg.lr, cfg.momentum, cfg.weight_decay)
        if epoch % 200 == 0:
            log.debug("asge epoch %d loss %.6f", epoch, value)
    _freeze_statistics(net)
    E = forward_embeddings(net).data.copy()
    return AsgeResult(E, net, losses, fractions)


@dataclass
class SimilarityReport:
    rows: list[tuple[int, int, float, float, float, float]]
    mean_residual: float
    max_residual: float
    relaxed_fraction: float

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("i,j,target,cos,sigma,residual\n")
            for i, j, a, c, s, r in self.rows:
                fh.write(f"{i},{j},{a!r},{c!r},{s:g},{r!r}\n")


def embedding_similarity_report(E: np.ndarray, A_sym: np.ndarray,
                                alpha: float | None = None) -> SimilarityReport:
    E = np.asarray(E, dtype=np.float64)
    cos = pairwise_cosine(E, E).data
    gate = relaxation_gate(cos, A_sym, alpha)
    resid = cos - A_sym
    n = A_sym.shape[0]
    rows = [(i, j, float(A_sym[i, j]), float(cos[i, j]), float(gate[i, j]), float(resid[i, j]))
            for i in range(n) for j in range(n)]
    kept = np.abs(resid[gate > 0])
    return SimilarityReport(
        rows=rows,
        mean_residual=float(kept.mean()) if kept.size else 0.0,
        max_residual=float(kept.max()) if kept.size else 0.0,
        relaxed_fraction=float(1.0 - gate.mean()),
    )


def export_embeddings(out_dir: str | Path, result: AsgeResult, names: list[str] | None = None) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    E = result.embeddings
    save_csv(out / "embeddings.csv", E, header=[f"d{c}" for c in range(E.shape[1])], index=names)
    save_tensor(out / "embeddings.cmat", E)
    with open(out / "asge_loss.csv", "w", encoding="utf-8") as fh:
        fh.write("epoch,loss,relaxed_fraction\n")
        for epoch, (loss, frac) in enumerate(zip(result.losses, result.relaxed_fraction)):
            fh.write(f"{epoch},{loss!r},{frac!r}\n")
