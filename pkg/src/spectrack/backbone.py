"""Bi-stream feature extraction: the spatial-spectral HS backbone and a
stage-compatible residual RGB stream.

Both streams emit a four-stage pyramid. For an H x W input the stage shapes
are H/2 x W/2 x C, H/4 x W/4 x 2C, H/4 x W/4 x 4C, and H/4 x W/4 x 8C; only
stages 1 and 2 downsample. Tensors are NCHW torch tensors; conversion from
the channels-last numpy data types happens at the model boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .data import HSCube, RGBImage


@dataclass(frozen=True)
class StageSpec:
    """Shape contract of one backbone stage."""

    stage_index: int
    out_channels: int
    downsample: bool
    block_count: int

    def __post_init__(self):
        if not 1 <= self.stage_index <= 4:
            raise ValueError(f"stage index must be 1..4, got {self.stage_index}")
        if self.downsample and self.stage_index > 2:
            raise ValueError("only stages 1 and 2 may downsample")
        if self.out_channels < 1 or self.block_count < 1:
            raise ValueError("out_channels and block_count must be >= 1")


def stage_specs(base_channels: int, blocks_per_stage: int = 2) -> list[StageSpec]:
    """The four-stage plan: channels C, 2C, 4C, 8C; stride 2 in stages 1-2."""
    return [
        StageSpec(i + 1, base_channels * (2**i), downsample=i < 2, block_count=blocks_per_stage)
        for i in range(4)
    ]


@dataclass
class FeaturePyramid:
    """Stage-indexed feature maps of one stream ([N, c_i, h_i, w_i] tensors)."""

    stages: dict[int, torch.Tensor]
    stream: str  # "hs" | "rgb" | "hs_fused"

    def __getitem__(self, stage: int) -> torch.Tensor:
        return self.stages[stage]

    def stage_shapes(self) -> dict[int, tuple[int, ...]]:
        return {i: tuple(t.shape[1:]) for i, t in self.stages.items()}


def expected_stage_shapes(h: int, w: int, base_channels: int) -> dict[int, tuple[int, int, int]]:
    """Contractual (c, h, w) per stage for an H x W input."""
    c = base_channels
    return {
        1: (c, h // 2, w // 2),
        2: (2 * c, h // 4, w // 4),
        3: (4 * c, h // 4, w // 4),
        4: (8 * c, h // 4, w // 4),
    }


def cube_to_tensor(cube: HSCube) -> torch.Tensor:
    """[H, W, B] numpy cube -> [B, H, W] float tensor."""
    return torch.from_numpy(cube.data.transpose(2, 0, 1).copy())


def rgb_to_tensor(img: RGBImage) -> torch.Tensor:
    """[H, W, 3] numpy image -> [3, H, W] float tensor."""
    return torch.from_numpy(img.data.transpose(2, 0, 1).copy())


def _activation(name: str) -> nn.Module:
    if name == "relu":
        return nn.ReLU(inplace=False)
    if name == "identity":
        return nn.Identity()
    raise ValueError(f"unknown activation: {name!r}")


def _norm(name: str, channels: int) -> nn.Module:
    if name == "batch":
        return nn.BatchNorm2d(channels)
    if name == "none":
        return nn.Identity()
    raise ValueError(f"unknown norm: {name!r}")


class SpatialSpectralConv(nn.Module):
    """Parallel spatial and spectral convolution with summed projections.

    The spatial branch is a depthwise-separable 2-D convolution; the spectral
    branch reinterprets the channel axis as a depth axis and slides a 3x3x3
    3-D kernel across neighboring bands before projecting back to 2-D
    channels. Both branches map to ``out_channels`` and are added elementwise.
    """

    def __init__(self, in_channels, out_channels, stride=1, spectral_filters=2, bias=True):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.stride = stride
        self.spectral_filters = spectral_filters
        self.spatial_depthwise = nn.Conv2d(
            in_channels, in_channels, 3, stride=stride, padding=1, groups=in_channels, bias=bias
        )
        self.spatial_pointwise = nn.Conv2d(in_channels, out_channels, 1, bias=bias)
        self.spectral_conv3d = nn.Conv3d(
            1, spectral_filters, 3, stride=(1, stride, stride), padding=1, bias=bias
        )
        self.spectral_pointwise = nn.Conv2d(
            spectral_filters * in_channels, out_channels, 1, bias=bias
        )

    def forward(self, x):
        spatial = self.spatial_pointwise(self.spatial_depthwise(x))
        n = x.shape[0]
        vol = self.spectral_conv3d(x.unsqueeze(1))  # [N, m, C_in, h', w']
        vol = vol.reshape(n, self.spectral_filters * self.in_channels, *vol.shape[-2:])
        spectral = self.spectral_pointwise(vol)
        if spatial.shape != spectral.shape:
            raise RuntimeError(
                f"branch shape mismatch: spatial {tuple(spatial.shape)} vs "
                f"spectral {tuple(spectral.shape)}"
            )
        return spatial + spectral


class SpatialSpectralBlock(nn.Module):
    """Residual block of two spatial-spectral convolutions.

    out = act(norm(conv2(act(norm(conv1(x))))) + shortcut(x)); the shortcut
    projects with a strided 1x1 convolution whenever channels or resolution
    change.
    """

    def __init__(self, in_channels, out_channels, stride=1, spectral_filters=2,
                 norm="batch", activation="relu"):
        super().__init__()
        bias = norm == "none"
        self.conv1 = SpatialSpectralConv(
            in_channels, out_channels, stride=stride, spectral_filters=spectral_filters, bias=bias
        )
        self.bn1 = _norm(norm, out_channels)
        self.conv2 = SpatialSpectralConv(
            out_channels, out_channels, spectral_filters=spectral_filters, bias=bias
        )
        self.bn2 = _norm(norm, out_channels)
        self.act = _activation(activation)
        if stride != 1 or in_channels != out_channels:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_channels, out_channels, 1, stride=stride, bias=bias),
                _norm(norm, out_channels),
            )
        else:
            self.shortcut = nn.Identity()

    def forward(self, x):
        y = self.act(self.bn1(self.conv1(x)))
        y = self.bn2(self.conv2(y))
        return self.act(y + self.shortcut(x))


class ResidualBlock2d(nn.Module):
    """Plain 2-D residual block for the RGB stream."""

    def __init__(self, in_channels, out_channels, stride=1, norm="batch", activation="relu"):
        super().__init__()
        bias = norm == "none"
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, stride=stride, padding=1, bias=bias)
        self.bn1 = _norm(norm, out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1, bias=bias)
        self.bn2 = _norm(norm, out_channels)
        self.act = _activation(activation)
        if stride != 1 or in_channels != out_channels:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_channels, out_channels, 1, stride=stride, bias=bias),
                _norm(norm, out_channels),
            )
        else:
            self.shortcut = nn.Identity()

    def forward(self, x):
        y = self.act(self.bn1(self.conv1(x)))
        y = self.bn2(self.conv2(y))
        return self.act(y + self.shortcut(x))


class _Stage(nn.Module):
    """One backbone stage; blocks registered as block0..blockN-1."""

    def __init__(self, blocks):
        super().__init__()
        self.block_count = len(blocks)
        for j, b in enumerate(blocks):
            self.add_module(f"block{j}", b)

    def forward(self, x):
        for j in range(self.block_count):
            x = getattr(self, f"block{j}")(x)
        return x


def _build_stages(in_channels, specs, make_block):
    stages = []
    c_in = in_channels
    for spec in specs:
        blocks = []
        for j in range(spec.block_count):
            stride = 2 if (spec.downsample and j == 0) else 1
            blocks.append(make_block(c_in, spec.out_channels, stride))
            c_in = spec.out_channels
        stages.append(_Stage(blocks))
    return stages


class HSBackbone(nn.Module):
    """Four-stage spatial-spectral backbone for hyperspectral crops."""

    def __init__(self, bands, base_channels, blocks_per_stage=2, spectral_filters=2,
                 norm="batch", activation="relu"):
        super().__init__()
        self.bands = bands
        self.base_channels = base_channels
        self.specs = stage_specs(base_channels, blocks_per_stage)

        def make(c_in, c_out, stride):
            return SpatialSpectralBlock(
                c_in, c_out, stride=stride, spectral_filters=spectral_filters,
                norm=norm, activation=activation,
            )

        for spec, stage in zip(self.specs, _build_stages(bands, self.specs, make)):
            self.add_module(f"stage{spec.stage_index}", stage)

    def forward(self, x) -> FeaturePyramid:
        if x.shape[-2] % 4 != 0 or x.shape[-1] % 4 != 0:
            raise ValueError(f"input spatial dims must be divisible by 4, got {tuple(x.shape[-2:])}")
        stages = {}
        for i in range(1, 5):
            x = getattr(self, f"stage{i}")(x)
            stages[i] = x
        return FeaturePyramid(stages=stages, stream="hs")


class RGBBackbone(nn.Module):
    """Stage-compatible residual stand-in for a pre-trained RGB backbone.

    Emits the same stage shapes as the HS stream so fusion stays elementwise;
    converted external weights can be loaded through the checkpoint loader's
    partial mode.
    """

    def __init__(self, base_channels, blocks_per_stage=2, norm="batch", activation="relu"):
        super().__init__()
        self.base_channels = base_channels
        self.specs = stage_specs(base_channels, blocks_per_stage)

        def make(c_in, c_out, stride):
            return ResidualBlock2d(c_in, c_out, stride=stride, norm=norm, activation=activation)

        for spec, stage in zip(self.specs, _build_stages(3, self.specs, make)):
            self.add_module(f"stage{spec.stage_index}", stage)

    def forward(self, x) -> FeaturePyramid:
        if x.shape[-2] % 4 != 0 or x.shape[-1] % 4 != 0:
            raise ValueError(f"input spatial dims must be divisible by 4, got {tuple(x.shape[-2:])}")
        stages = {}
        for i in range(1, 5):
            x = getattr(self, f"stage{i}")(x)
            stages[i] = x
        return FeaturePyramid(stages=stages, stream="rgb")
