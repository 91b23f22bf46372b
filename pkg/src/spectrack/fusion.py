"""Spectral attention fusion of RGB and HS stage features.

Each fused stage combines four terms: per-modality intra-modality features
gated by sigmoid channel attention, plus both modalities gated by a 2-way
softmax over their channel embeddings. Channel descriptors come from global
average pooling followed by a fixed-size 1-D convolution along the channel
axis, so nearby bands inform each other's weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .backbone import FeaturePyramid


@dataclass
class AttentionState:
    """All fusion intermediates, kept for diagnostics and verification."""

    rgb_pooled: torch.Tensor  # [N, C]
    hs_pooled: torch.Tensor  # [N, C]
    rgb_intra_embed: torch.Tensor  # [N, C]
    hs_intra_embed: torch.Tensor  # [N, C]
    rgb_inter_embed: torch.Tensor  # [N, C]
    hs_inter_embed: torch.Tensor  # [N, C]
    stacked_inter: torch.Tensor  # [N, 2, C]
    inter_weights: torch.Tensor  # [N, 2, C]; softmax over dim 1
    rgb_intra_weights: torch.Tensor  # [N, C]; sigmoid, in (0, 1)
    hs_intra_weights: torch.Tensor  # [N, C]
    rgb_intra_refined: torch.Tensor  # [N, C, H, W]
    hs_intra_refined: torch.Tensor
    rgb_inter_refined: torch.Tensor
    hs_inter_refined: torch.Tensor


class SpectralAttentionFusion(nn.Module):
    """Intra- and inter-modality channel attention over one stage pair.

    The intra and inter 1-D convolutions each have a single parameter set
    shared between the two modalities.
    """

    def __init__(self, channels, kernel_size=5):
        super().__init__()
        if kernel_size % 2 != 1:
            raise ValueError("channel kernel size must be odd")
        self.channels = channels
        self.intra_conv = nn.Conv1d(1, 1, kernel_size, padding=kernel_size // 2, bias=True)
        self.inter_conv = nn.Conv1d(1, 1, kernel_size, padding=kernel_size // 2, bias=True)

    def forward(self, rgb_feat, hs_feat):
        if rgb_feat.shape != hs_feat.shape:
            raise ValueError(
                f"fusion inputs must match: {tuple(rgb_feat.shape)} vs {tuple(hs_feat.shape)}"
            )
        n, c = rgb_feat.shape[:2]
        if c != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {c}")
        rgb_pooled = rgb_feat.mean(dim=(2, 3))
        hs_pooled = hs_feat.mean(dim=(2, 3))

        def conv1d(conv, v):
            return conv(v.unsqueeze(1)).squeeze(1)

        rgb_intra = conv1d(self.intra_conv, rgb_pooled)
        hs_intra = conv1d(self.intra_conv, hs_pooled)
        rgb_inter = conv1d(self.inter_conv, rgb_pooled)
        hs_inter = conv1d(self.inter_conv, hs_pooled)

        rgb_gate = torch.sigmoid(rgb_intra)
        hs_gate = torch.sigmoid(hs_intra)
        rgb_intra_refined = rgb_gate[:, :, None, None] * rgb_feat
        hs_intra_refined = hs_gate[:, :, None, None] * hs_feat

        stacked = torch.stack([rgb_inter, hs_inter], dim=1)  # [N, 2, C]
        inter_w = torch.softmax(stacked, dim=1)
        rgb_inter_refined = inter_w[:, 0][:, :, None, None] * rgb_feat
        hs_inter_refined = inter_w[:, 1][:, :, None, None] * hs_feat

        fused = rgb_intra_refined + hs_intra_refined + rgb_inter_refined + hs_inter_refined
        state = AttentionState(
            rgb_pooled=rgb_pooled,
            hs_pooled=hs_pooled,
            rgb_intra_embed=rgb_intra,
            hs_intra_embed=hs_intra,
            rgb_inter_embed=rgb_inter,
            hs_inter_embed=hs_inter,
            stacked_inter=stacked,
            inter_weights=inter_w,
            rgb_intra_weights=rgb_gate,
            hs_intra_weights=hs_gate,
            rgb_intra_refined=rgb_intra_refined,
            hs_intra_refined=hs_intra_refined,
            rgb_inter_refined=rgb_inter_refined,
            hs_inter_refined=hs_inter_refined,
        )
        return fused, state


class PyramidFusion(nn.Module):
    """Per-stage fusion over stages 2-4; stage 1 passes through unfused."""

    FUSED_STAGES = (2, 3, 4)

    def __init__(self, stage_channels: dict[int, int], kernel_size=5):
        super().__init__()
        for i in self.FUSED_STAGES:
            self.add_module(f"stage{i}", SpectralAttentionFusion(stage_channels[i], kernel_size))

    def forward(self, rgb_pyr: FeaturePyramid, hs_pyr: FeaturePyramid):
        for i in self.FUSED_STAGES:
            if i not in rgb_pyr.stages or i not in hs_pyr.stages:
                raise ValueError(f"missing stage {i} in input pyramids")
        fused = {1: hs_pyr[1]}
        states = {}
        for i in self.FUSED_STAGES:
            fused[i], states[i] = getattr(self, f"stage{i}")(rgb_pyr[i], hs_pyr[i])
        return FeaturePyramid(stages=fused, stream="hs_fused"), states
