"""Small visual feature extractors: a strided conv stack for grids, SNet for frame sequences."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn_core import Conv1d, Conv2d, Linear, Module, Tensor, make_norm, relu
from .nn_core import ops


class InputTooSmall(ValueError):
    pass


@dataclass
class FeatureMap:
    """Visual features with M locations flattened row-major over (H, W) or over T.

    ``data`` is batched: B x M x C.
    """

    data: Tensor
    layout: str  # "image" or "video"
    grid: tuple[int, ...]  # (H, W) or (T,)
    scale_id: int = 1

    @property
    def num_locations(self) -> int:
        return int(np.prod(self.grid))

    @property
    def channels(self) -> int:
        return self.data.shape[-1]


def flatten_grid(x) -> Tensor:
    """B x H x W x C -> B x (H*W) x C, row-major over (H, W)."""
    B, H, W, C = x.shape
    return ops.reshape(x, (B, H * W, C))


def unflatten_grid(x, H: int, W: int) -> Tensor:
    B, M, C = x.shape
    if M != H * W:
        raise ValueError(f"cannot unflatten {M} locations into {H}x{W}")
    return ops.reshape(x, (B, H, W, C))


class ToyImageBackbone(Module):
    """Stride-2 3x3 conv stages; each stage feeds a 1x1 reduction head (linear, norm, ReLU),
    emitting one scale.

    Stages after the first add a 2x2 average-pooled skip when channel counts
    agree and the spatial size is even.
    """

    def __init__(self, in_channels: int, widths: tuple[int, ...], out_channels: int,
                 rng: np.random.Generator, norm: str = "bn"):
        self.num_scales = len(widths)
        self.stages, self.norms, self.heads, self.head_norms = [], [], [], []
        c = in_channels
        for w in widths:
            self.stages.append(Conv2d(c, w, 3, rng, stride=2, padding=1))
            self.norms.append(make_norm(norm, w))
            self.heads.append(Linear(w, out_channels, rng))
            self.head_norms.append(make_norm(norm, out_channels))
            c = w
        self.in_channels = in_channels

    @property
    def min_size(self) -> int:
        return 2 ** self.num_scales

    def forward(self, x) -> list[FeatureMap]:
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim != 4 or x.shape[3] != self.in_channels:
            raise ValueError(f"expected B x H x W x {self.in_channels} input, got {x.shape}")
        if min(x.shape[1], x.shape[2]) < self.min_size:
            raise InputTooSmall(
                f"input {x.shape[1]}x{x.shape[2]} is below the minimum "
                f"{self.min_size}x{self.min_size} for {self.num_scales} scales")
        maps = []
        layers = zip(self.stages, self.norms, self.heads, self.head_norms)
        for s, (conv, norm, head, head_norm) in enumerate(layers, 1):
            y = relu(norm(conv(x)))
            if s > 1 and x.shape[3] == y.shape[3] and x.shape[1] % 2 == 0 and x.shape[2] % 2 == 0:
                y = y + ops.avg_pool2d(x, 2)
            x = y
            feat = relu(head_norm(head(x)))
            B, H, W, C = feat.shape
            maps.append(FeatureMap(flatten_grid(feat), "image", (H, W), s))
        return maps


def image_features(backbone: ToyImageBackbone, x) -> list[FeatureMap]:
    return backbone(x)


class SNet(Module):
    """Stages of (1-D conv -> norm -> ReLU -> temporal average pooling)."""

    def __init__(self, in_channels: int, channels: int, rng: np.random.Generator,
                 stages: int = 4, kernel: int = 3, pool: int = 2, norm: str = "bn"):
        self.convs, self.norms = [], []
        c = in_channels
        for _ in range(stages):
            self.convs.append(Conv1d(c, channels, kernel, rng))
            self.norms.append(make_norm(norm, channels))
            c = channels
        self.pool = pool
        self.in_channels = in_channels

    @property
    def reduction(self) -> int:
        return self.pool ** len(self.convs)

    def output_length(self, frames: int) -> int:
        t = frames
        for _ in self.convs:
            t = -(-t // self.pool)
        return t

    def forward(self, frames) -> FeatureMap:
        x = frames if isinstance(frames, Tensor) else Tensor(frames)
        if x.ndim != 3 or x.shape[2] != self.in_channels:
            raise ValueError(f"expected B x T x {self.in_channels} frames, got {x.shape}")
        if x.shape[1] < self.reduction:
            raise InputTooSmall(f"{x.shape[1]} frames; SNet needs at least {self.reduction}")
        for conv, norm in zip(self.convs, self.norms):
            x = ops.avg_pool1d(relu(norm(conv(x))), self.pool)
        return FeatureMap(x, "video", (x.shape[1],), 1)


def snet_features(snet: SNet, frames) -> FeatureMap:
    return snet(frames)
