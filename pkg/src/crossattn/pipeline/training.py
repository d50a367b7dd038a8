"""Minibatch training of backbone + attention heads with the imbalance-weighted BCE."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..cma import AttentionMaps
from ..loss_metrics import class_weights, map_score, weighted_bce
from ..nn_core import NonFiniteError, StepSchedule, Tensor, make_rng, sgd_step
from .model import MultiLabelModel, embedding_tensor

log = logging.getLogger(__name__)


@dataclass
class TrainSpec:
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-5
    epochs: int = 30
    batch_size: int = 32
    lr_step: int = 30
    lr_gamma: float = 0.1
    beta: float = 0.0
    joint: bool = False


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    val_map: float


def predict(model: MultiLabelModel, E: Tensor, inputs: np.ndarray,
            batch_size: int = 256) -> tuple[np.ndarray, list[AttentionMaps], list[tuple[int, ...]]]:
    """Eval-mode scores for every example; attention maps concatenated over batches per scale."""
    was_training = model.training
    model.eval()
    probs, zs, as_, grids = [], None, None, None
    E_const = Tensor(E.data)
    for start in range(0, inputs.shape[0], batch_size):
        p, maps, grids = model(Tensor(inputs[start:start + batch_size]), E_const)
        probs.append(p.data)
        if zs is None:
            zs, as_ = [[] for _ in maps], [[] for _ in maps]
        for l, m in enumerate(maps):
            zs[l].append(m.z)
            as_[l].append(m.a)
    model.train(was_training)
    maps = [AttentionMaps(np.concatenate(z), np.concatenate(a)) for z, a in zip(zs, as_)]
    return np.concatenate(probs), maps, grids


class Trainer:
    """Holds model, embeddings and optimizer state; ``epoch`` counts completed epochs."""

    def __init__(self, model: MultiLabelModel, embeddings: np.ndarray, spec: TrainSpec,
                 priors: np.ndarray, seed: int):
        self.model = model
        self.spec = spec
        self.priors = np.asarray(priors, dtype=np.float64)
        self.seed = seed
        self.E = embedding_tensor(embeddings, spec.joint)
        self.params = model.parameters() + ([self.E] if spec.joint else [])
        self.schedule = StepSchedule(spec.lr, spec.lr_step, spec.lr_gamma)
        self.epoch = 0
        self.history: list[EpochRecord] = []

    def step(self, x: np.ndarray, y: np.ndarray, lr: float) -> float:
        probs, _, _ = self.model(Tensor(x), self.E)
        w = class_weights(y, self.priors, self.spec.beta)
        loss = weighted_bce(probs, y, w)
        value = loss.item()
        if not np.isfinite(value):
            raise NonFiniteError(f"non-finite training loss at epoch {self.epoch}")
        loss.backward()
        sgd_step(self.params, lr, self.spec.momentum, self.spec.weight_decay)
        return value

    def run_epoch(self, inputs: np.ndarray, labels: np.ndarray) -> float:
        self.model.train()
        order = make_rng(self.seed, 11, self.epoch).permutation(inputs.shape[0])
        lr = self.schedule(self.epoch)
        bs = self.spec.batch_size
        total, count = 0.0, 0
        for start in range(0, len(order), bs):
            idx = order[start:start + bs]
            if idx.size < 2 and len(order) > 1:
                continue  # a single-sample batch would collapse batch norm
            total += self.step(inputs[idx], labels[idx], lr) * idx.size
            count += idx.size
        self.epoch += 1
        return total / max(count, 1)

    def fit(self, train_x: np.ndarray, train_y: np.ndarray, val_x: np.ndarray | None = None,
            val_y: np.ndarray | None = None, epochs: int | None = None) -> list[EpochRecord]:
        target = self.spec.epochs if epochs is None else self.epoch + epochs
        while self.epoch < target:
            lr = self.schedule(self.epoch)
            loss = self.run_epoch(train_x, train_y)
            val = float("nan")
            if val_x is not None and len(val_x):
                scores, _, _ = predict(self.model, self.E, val_x)
                val = map_score(scores, val_y)
            rec = EpochRecord(self.epoch, lr, loss, val)
            self.history.append(rec)
            log.info("epoch %d lr %.4g loss %.5f val mAP %.4f", rec.epoch, lr, loss, val)
        return self.history

    # -- checkpoint state -------------------------------------------------------
    def state(self) -> dict[str, np.ndarray]:
        tensors = {f"model/{k}": v for k, v in self.model.state_dict().items()}
        for name, p in self.model.named_parameters():
            tensors[f"optim/{name}"] = p.momentum_buf.copy()
        tensors["embeddings"] = self.E.data.copy()
        if self.spec.joint:
            tensors["optim/embeddings"] = self.E.momentum_buf.copy()
        tensors["trainer/epoch"] = np.array([float(self.epoch)])
        return tensors

    def load_state(self, tensors: dict[str, np.ndarray]) -> None:
        self.model.load_state_dict({k[6:]: v for k, v in tensors.items() if k.startswith("model/")})
        for name, p in self.model.named_parameters():
            key = f"optim/{name}"
            if key in tensors:
                p.momentum_buf[...] = tensors[key]
        self.E.data[...] = tensors["embeddings"]
        if self.spec.joint and "optim/embeddings" in tensors:
            self.E.momentum_buf[...] = tensors["optim/embeddings"]
        self.epoch = int(tensors["trainer/epoch"][0])
