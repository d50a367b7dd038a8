"""Cross-modality attention head and the attention baselines it is compared against.

Shapes are batched: visual features ``I`` are B x M x C, label embeddings
``E`` are N x C_e, attention maps are B x N x M (B x 1 x M for the shared
self-attention map).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .nn_core import (Linear, Module, Parameter, Tensor, make_norm, pairwise_cosine, relu,
                      sigmoid, tensor)
from .nn_core import ops


@dataclass
class AttentionMaps:
    z: np.ndarray  # raw scores
    a: np.ndarray  # normalized weights, rows sum to 1


class CmtModule(Module):
    """Per-location (1x1) projection into the embedding space: [Linear -> norm -> ReLU] x layers."""

    def __init__(self, c_in: int, c_embed: int, rng: np.random.Generator, layers: int = 2,
                 hidden: int | None = None, norm: str = "bn", final_relu: bool = True):
        if layers < 1:
            raise ValueError("CMT needs at least one layer")
        hidden = hidden or c_embed
        dims = [c_in] + [hidden] * (layers - 1) + [c_embed]
        self.linears = [Linear(a, b, rng) for a, b in zip(dims[:-1], dims[1:])]
        self.norms = [make_norm(norm, b) for b in dims[1:]]
        self.c_in, self.c_embed = c_in, c_embed
        self.final_relu = final_relu

    def forward(self, I) -> Tensor:
        x = tensor(I)
        if x.shape[-1] != self.c_in:
            raise ValueError(f"CMT expects {self.c_in} channels, got {x.shape[-1]}")
        last = len(self.linears) - 1
        for j, (lin, norm) in enumerate(zip(self.linears, self.norms)):
            x = norm(lin(x))
            if j < last or self.final_relu:
                x = relu(x)
        return x


class Classifier(Module):
    """Per-category weight vectors over visual channels and a bias (shared scalar by default)."""

    def __init__(self, num_labels: int, channels: int, rng: np.random.Generator,
                 shared_bias: bool = True):
        bound = np.sqrt(6.0 / channels)
        self.weight = Parameter(rng.uniform(-bound, bound, (num_labels, channels)))
        self.bias = Parameter(np.zeros(1 if shared_bias else num_labels))

    def forward(self, H) -> Tensor:
        return classify(H, self)


def cmt_project(cmt: CmtModule, I) -> Tensor:
    return cmt(I)


def attention_scores(I_s, E, eps: float = 1e-12) -> Tensor:
    """z[k, i] = relu(cos(I_s[i], e_k)); returns (B x) N x M."""
    I_s = tensor(I_s)
    cos = pairwise_cosine(I_s, E, eps)  # (B x) M x N
    axes = (0, 2, 1) if cos.ndim == 3 else (1, 0)
    return relu(ops.transpose(cos, axes))


def normalize_attention(z, eps: float = 1e-12) -> Tensor:
    """Row-normalize over locations; rows summing below ``eps`` fall back to uniform 1/M.

    Fallback rows are constants, so no gradient flows through them.
    """
    z = tensor(z)
    M = z.shape[-1]
    total = z.sum(axis=-1, keepdims=True)
    fallback = total.data < eps
    if not fallback.any():
        return z / total
    safe = ops.where(fallback, 1.0, total)
    return ops.where(np.broadcast_to(fallback, z.shape), 1.0 / M, z / safe)


def aggregate_features(a, I) -> Tensor:
    """h_k = sum_i a[k, i] I[i] over the original (unprojected) features."""
    a, I = tensor(a), tensor(I)
    if a.shape[-1] != I.shape[-2]:
        raise ValueError(f"attention over {a.shape[-1]} locations, features have {I.shape[-2]}")
    return ops.matmul(a, I)


def classify(H, clf: Classifier) -> Tensor:
    """y*_k = sigmoid(w_k . h_k + b); ``H`` is (B x) N x C or (B x) 1 x C (shared)."""
    H = tensor(H)
    if H.shape[-1] != clf.weight.shape[1]:
        raise ValueError(f"features have {H.shape[-1]} channels, classifier expects {clf.weight.shape[1]}")
    logits = (H * clf.weight).sum(axis=-1) + clf.bias
    return sigmoid(logits)


class CmaHead(Module):
    kind = "cma"

    def __init__(self, channels: int, c_embed: int, num_labels: int, rng: np.random.Generator,
                 cmt_layers: int = 2, cmt_hidden: int | None = None, norm: str = "bn",
                 shared_bias: bool = True, final_relu: bool = True):
        self.cmt = CmtModule(channels, c_embed, rng, cmt_layers, cmt_hidden, norm, final_relu)
        self.classifier = Classifier(num_labels, channels, rng, shared_bias)

    def forward(self, I, E) -> tuple[Tensor, AttentionMaps]:
        return cma_forward(I, E, self)


def cma_forward(I, E, head: CmaHead, eps: float = 1e-12) -> tuple[Tensor, AttentionMaps]:
    """CMT projection -> cosine attention -> normalization -> aggregation -> classifier."""
    I = I.data if hasattr(I, "layout") else tensor(I)
    E = tensor(E)
    if E.shape[-1] != head.cmt.c_embed:
        raise ValueError(f"embeddings have dim {E.shape[-1]}, CMT projects to {head.cmt.c_embed}")
    z = attention_scores(head.cmt(I), E, eps)
    a = normalize_attention(z, eps)
    probs = classify(aggregate_features(a, I), head.classifier)
    return probs, AttentionMaps(z.data, a.data)


class SelfAttentionHead(Module):
    """One category-shared map z_i = sigmoid(w . I_i + c), then the same pooling and classifiers."""

    kind = "self"

    def __init__(self, channels: int, num_labels: int, rng: np.random.Generator,
                 shared_bias: bool = True):
        self.score = Linear(channels, 1, rng)
        self.classifier = Classifier(num_labels, channels, rng, shared_bias)

    def forward(self, I, E=None) -> tuple[Tensor, AttentionMaps]:
        return self_attention_baseline(I, self)


def self_attention_baseline(I, head: SelfAttentionHead) -> tuple[Tensor, AttentionMaps]:
    I = I.data if hasattr(I, "layout") else tensor(I)
    s = head.score(I)  # (B x) M x 1
    axes = (0, 2, 1) if s.ndim == 3 else (1, 0)
    z = sigmoid(ops.transpose(s, axes))  # (B x) 1 x M
    a = normalize_attention(z)
    probs = classify(aggregate_features(a, I), head.classifier)
    return probs, AttentionMaps(z.data, a.data)


class UniformHead(Module):
    """Fixed 1/M attention: global average pooling followed by the per-category classifiers."""

    kind = "uniform"

    def __init__(self, channels: int, num_labels: int, rng: np.random.Generator,
                 shared_bias: bool = True):
        self.classifier = Classifier(num_labels, channels, rng, shared_bias)

    def forward(self, I, E=None) -> tuple[Tensor, AttentionMaps]:
        I = I.data if hasattr(I, "layout") else tensor(I)
        M = I.shape[-2]
        a = np.full(I.shape[:-2] + (1, M), 1.0 / M)
        probs = classify(aggregate_features(a, I), self.classifier)
        return probs, AttentionMaps(a.copy(), a)


def multi_scale_cma(features: Sequence, E, heads: Sequence[Module]) -> tuple[Tensor, list[AttentionMaps]]:
    """Average of per-scale probabilities; one head (CMT + classifier) per scale."""
    if not features:
        raise ValueError("multi-scale fusion needs at least one feature map")
    if len(features) != len(heads):
        raise ValueError(f"{len(features)} feature maps but {len(heads)} heads")
    outs = [head(I, E) for I, head in zip(features, heads)]
    probs = outs[0][0]
    for p, _ in outs[1:]:
        probs = probs + p
    if len(outs) > 1:
        probs = probs * (1.0 / len(outs))
    return probs, [m for _, m in outs]
