"""Prediction heads: depthwise cross-correlation, the spectral-angle affinity
branch, and the classification/localization towers.

Offsets in the 4-channel localization map are exp-mapped and multiplied by
the backbone stride, so decoded (l, t, r, b) distances are strictly positive
search-crop pixels.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .backbone import _activation, _norm


def dw_xcorr(template_feat, search_feat):
    """Per-channel valid-mode sliding dot product of template over search.

    Accepts [C, h, w] pairs or batched [N, C, h, w] pairs; template and search
    must agree in batch and channel dims and the template may not exceed the
    search spatially.
    """
    squeeze = template_feat.dim() == 3
    z = template_feat.unsqueeze(0) if squeeze else template_feat
    x = search_feat.unsqueeze(0) if squeeze else search_feat
    if z.dim() != 4 or x.dim() != 4 or z.shape[:2] != x.shape[:2]:
        raise ValueError(
            f"incompatible shapes: template {tuple(template_feat.shape)}, "
            f"search {tuple(search_feat.shape)}"
        )
    n, c = z.shape[:2]
    if z.shape[2] > x.shape[2] or z.shape[3] > x.shape[3]:
        raise ValueError(
            f"template {tuple(z.shape[2:])} larger than search {tuple(x.shape[2:])}"
        )
    out = F.conv2d(
        x.reshape(1, n * c, *x.shape[2:]),
        z.reshape(n * c, 1, *z.shape[2:]),
        groups=n * c,
    )
    out = out.reshape(n, c, *out.shape[2:])
    return out.squeeze(0) if squeeze else out


def cosine_similarity_map(template_feat, search_feat, eps=1e-12):
    """Region-level cosine between the whole template embedding and every
    same-sized search window.

    Equivalent to L2-normalizing the template vector and each sliding window
    before their dot product; values lie in [-1, 1] up to ``eps`` slack.
    """
    squeeze = template_feat.dim() == 3
    z = template_feat.unsqueeze(0) if squeeze else template_feat
    x = search_feat.unsqueeze(0) if squeeze else search_feat
    corr = dw_xcorr(z, x).sum(dim=1)  # [N, ho, wo]
    kh, kw = z.shape[2:]
    win_sq = (
        F.avg_pool2d((x * x).sum(dim=1, keepdim=True), (kh, kw), stride=1) * (kh * kw)
    ).squeeze(1)
    z_norm = torch.sqrt(torch.clamp((z * z).sum(dim=(1, 2, 3)), min=0.0))
    win_norm = torch.sqrt(torch.clamp(win_sq, min=0.0))
    cos = corr / ((win_norm + eps) * (z_norm[:, None, None] + eps))
    return cos.squeeze(0) if squeeze else cos


@dataclass
class PredictionMaps:
    """Per-stage head outputs: [N, 2, h, w] logits, [N, 4, h, w] offsets in
    search-crop pixels, and optionally a [N, 1, h, w] spectral-angle map."""

    cls: torch.Tensor
    loc: torch.Tensor
    saa: torch.Tensor | None = None

    def map_hw(self) -> tuple[int, int]:
        return tuple(self.cls.shape[-2:])


def map_points(map_hw: tuple[int, int], stride: int, search_size: int) -> torch.Tensor:
    """Search-crop pixel coordinates (x, y) of every response-map location.

    The grid is centered in the crop: origin = (search_size - (n-1)*stride)/2
    per axis, spacing = stride.
    """
    h, w = map_hw
    oy = (search_size - (h - 1) * stride) / 2.0
    ox = (search_size - (w - 1) * stride) / 2.0
    ys = oy + stride * torch.arange(h, dtype=torch.float64)
    xs = ox + stride * torch.arange(w, dtype=torch.float64)
    grid_y, grid_x = torch.meshgrid(ys, xs, indexing="ij")
    return torch.stack([grid_x, grid_y], dim=-1)  # [h, w, 2]


def decode_boxes(loc_map, points):
    """(l, t, r, b) offsets at each location -> (x1, y1, x2, y2) boxes.

    ``loc_map`` is [4, h, w]; ``points`` is [h, w, 2] in the same pixel units.
    """
    pts = points.to(loc_map.dtype)
    x1 = pts[..., 0] - loc_map[0]
    y1 = pts[..., 1] - loc_map[1]
    x2 = pts[..., 0] + loc_map[2]
    y2 = pts[..., 1] + loc_map[3]
    return torch.stack([x1, y1, x2, y2], dim=-1)


def _init_small(conv, std=0.01):
    """Near-zero start for head output convs keeps early logits/offsets tame."""
    nn.init.normal_(conv.weight, std=std)
    if conv.bias is not None:
        nn.init.zeros_(conv.bias)
    return conv


class SpectralAngleBranch(nn.Module):
    """Embeds both feature maps, correlates them, and collapses the affinity
    volume to a single-channel map with a 1x1 convolution."""

    def __init__(self, in_channels, embed_dim):
        super().__init__()
        self.ez = nn.Conv2d(in_channels, embed_dim, 1)
        self.ex = nn.Conv2d(in_channels, embed_dim, 1)
        self.out = _init_small(nn.Conv2d(embed_dim, 1, 1))

    def embed(self, f_z, f_x):
        return self.ez(f_z), self.ex(f_x)

    def forward(self, f_z, f_x):
        z_emb, x_emb = self.embed(f_z, f_x)
        return self.out(dw_xcorr(z_emb, x_emb)), (z_emb, x_emb)


class CorrelationTower(nn.Module):
    """conv(z) / conv(x) -> depthwise correlation -> small conv tower."""

    def __init__(self, in_channels, width, out_channels, norm="batch", activation="relu"):
        super().__init__()
        bias = norm == "none"
        self.z_conv = nn.Sequential(
            nn.Conv2d(in_channels, width, 3, padding=1, bias=bias),
            _norm(norm, width),
            _activation(activation),
        )
        self.x_conv = nn.Sequential(
            nn.Conv2d(in_channels, width, 3, padding=1, bias=bias),
            _norm(norm, width),
            _activation(activation),
        )
        self.tower = nn.Sequential(
            nn.Conv2d(width, width, 1),
            _activation(activation),
            _init_small(nn.Conv2d(width, out_channels, 1)),
        )

    def forward(self, f_z, f_x):
        return self.tower(dw_xcorr(self.z_conv(f_z), self.x_conv(f_x)))


class StageNecks(nn.Module):
    """Per-stage 1x1 projections onto the shared head width."""

    def __init__(self, stage_channels: dict[int, int], width, norm="batch", activation="relu"):
        super().__init__()
        bias = norm == "none"
        self.stage_ids = tuple(sorted(stage_channels))
        for i, c in stage_channels.items():
            self.add_module(
                f"stage{i}",
                nn.Sequential(
                    nn.Conv2d(c, width, 1, bias=bias), _norm(norm, width), _activation(activation)
                ),
            )

    def forward(self, stage, x):
        return getattr(self, f"stage{stage}")(x)


class TrackingHead(nn.Module):
    """Shared-across-stages prediction head.

    Per stage: project template/search features through the stage neck, then
    run the classification and localization towers; the HS variant adds the
    spectral-angle branch.
    """

    def __init__(self, stage_channels: dict[int, int], width, embed_dim, stride,
                 with_saa=True, norm="batch", activation="relu"):
        super().__init__()
        self.stride = stride
        self.with_saa = with_saa
        self.neck = StageNecks(stage_channels, width, norm=norm, activation=activation)
        self.cls = CorrelationTower(width, width, 2, norm=norm, activation=activation)
        self.loc = CorrelationTower(width, width, 4, norm=norm, activation=activation)
        if with_saa:
            self.saa = SpectralAngleBranch(width, embed_dim)

    def forward_stage(self, stage, f_z, f_x):
        z = self.neck(stage, f_z)
        x = self.neck(stage, f_x)
        cls = self.cls(z, x)
        # raw offsets are capped well below float32 exp overflow
        loc = torch.exp(self.loc(z, x).clamp(max=60.0)) * self.stride
        saa = None
        embeds = None
        if self.with_saa:
            saa, embeds = self.saa(z, x)
        return PredictionMaps(cls=cls, loc=loc, saa=saa), embeds

    def forward(self, z_pyr, x_pyr, stages=(2, 3, 4)):
        maps, embeds = {}, {}
        for i in stages:
            maps[i], embeds[i] = self.forward_stage(i, z_pyr[i], x_pyr[i])
        return maps, embeds
