"""Backbone plus one attention head per used scale."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..backbone import SNet, ToyImageBackbone
from ..cma import AttentionMaps, CmaHead, SelfAttentionHead, UniformHead, multi_scale_cma
from ..nn_core import Module, Parameter, Tensor, make_rng

ATTENTION_KINDS = ("cma", "self", "uniform")


@dataclass
class ModelSpec:
    num_labels: int
    in_channels: int
    task: str = "image"
    attention: str = "cma"
    channels: int = 8
    widths: tuple[int, ...] = (16, 16, 16)
    scales: tuple[int, ...] = (1,)
    embed_dim: int = 16
    cmt_layers: int = 2
    cmt_hidden: int = 32
    cmt_final_relu: bool = True
    norm: str = "bn"
    shared_bias: bool = True
    snet_stages: int = 4
    snet_kernel: int = 3
    snet_pool: int = 2

    def validate(self) -> None:
        if self.attention not in ATTENTION_KINDS:
            raise ValueError(f"attention must be one of {ATTENTION_KINDS}, not {self.attention!r}")
        if self.task == "image":
            if not self.scales or min(self.scales) < 1 or max(self.scales) > len(self.widths):
                raise ValueError(f"scales {self.scales} must index backbone stages 1..{len(self.widths)}")
            if len(set(self.scales)) != len(self.scales):
                raise ValueError(f"duplicate scale in {self.scales}")
        elif self.task == "video":
            if tuple(self.scales) != (1,):
                raise ValueError("video models have a single temporal scale")
        else:
            raise ValueError(f"task must be image or video, not {self.task!r}")


class MultiLabelModel(Module):
    def __init__(self, spec: ModelSpec, seed: int):
        spec.validate()
        self.spec = spec
        rng = make_rng(seed, 3)
        if spec.task == "image":
            depth = max(spec.scales)
            self.backbone = ToyImageBackbone(spec.in_channels, tuple(spec.widths[:depth]),
                                             spec.channels, rng, spec.norm)
        else:
            self.backbone = SNet(spec.in_channels, spec.channels, rng, spec.snet_stages,
                                 spec.snet_kernel, spec.snet_pool, spec.norm)
        self.heads = [self._make_head(rng) for _ in spec.scales]

    def _make_head(self, rng) -> Module:
        s = self.spec
        if s.attention == "cma":
            return CmaHead(s.channels, s.embed_dim, s.num_labels, rng, s.cmt_layers,
                           s.cmt_hidden, s.norm, s.shared_bias, s.cmt_final_relu)
        if s.attention == "self":
            return SelfAttentionHead(s.channels, s.num_labels, rng, s.shared_bias)
        return UniformHead(s.channels, s.num_labels, rng, s.shared_bias)

    def features(self, x):
        if self.spec.task == "image":
            maps = self.backbone(x)
            return [maps[s - 1] for s in self.spec.scales]
        return [self.backbone(x)]

    def forward(self, x, E) -> tuple[Tensor, list[AttentionMaps], list[tuple[int, ...]]]:
        feats = self.features(x)
        probs, maps = multi_scale_cma(feats, E, self.heads)
        return probs, maps, [f.grid for f in feats]


def embedding_tensor(E: np.ndarray, trainable: bool) -> Tensor:
    return Parameter(E, name="embeddings") if trainable else Tensor(E)
