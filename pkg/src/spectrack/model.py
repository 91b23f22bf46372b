"""End-to-end tracker model: both backbones, per-stage fusion, per-stream
prediction heads, and the learned two-stream ensemble.

Checkpoint key prefixes: ``hs.*`` (spectral backbone), ``rgb.*`` (visual
backbone), ``safm.stage{i}.*`` (fusion), ``head.*`` (HS head: ``head.saa.*``,
``head.cls.*``, ``head.loc.*``, ``head.neck.*``), ``rgb_head.*``, and
``ensemble.lambda1/lambda2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .backbone import FeaturePyramid, HSBackbone, RGBBackbone, cube_to_tensor, rgb_to_tensor
from .config import ModelSection
from .data import Frame
from .fusion import PyramidFusion
from .heads import PredictionMaps, TrackingHead

STRIDE = 4  # total backbone downsampling factor
HEAD_STAGES = (2, 3, 4)


class EnsembleWeights(nn.Module):
    """Trainable per-stream mixing scalars, both initialized to 0.5."""

    def __init__(self, init=0.5):
        super().__init__()
        self.lambda1 = nn.Parameter(torch.tensor(float(init)))
        self.lambda2 = nn.Parameter(torch.tensor(float(init)))


def ensemble(maps_hs: PredictionMaps, maps_rgb: PredictionMaps, w: EnsembleWeights) -> PredictionMaps:
    """Weighted sum of the per-stream CLS and LOC maps; the spectral-angle
    map comes from the HS stream alone."""
    return PredictionMaps(
        cls=w.lambda1 * maps_hs.cls + w.lambda2 * maps_rgb.cls,
        loc=w.lambda1 * maps_hs.loc + w.lambda2 * maps_rgb.loc,
        saa=maps_hs.saa,
    )


def _resize_like(t, hw):
    if tuple(t.shape[-2:]) == tuple(hw):
        return t
    return F.interpolate(t, size=tuple(hw), mode="bilinear", align_corners=False)


def aggregate_stages(maps: dict[int, PredictionMaps]) -> PredictionMaps:
    """Unweighted mean over stages, resized to the first stage's resolution."""
    if not maps:
        raise ValueError("no stages to aggregate")
    order = sorted(maps)
    hw = maps[order[0]].map_hw()
    cls = torch.stack([_resize_like(maps[i].cls, hw) for i in order]).mean(dim=0)
    loc = torch.stack([_resize_like(maps[i].loc, hw) for i in order]).mean(dim=0)
    saa = None
    if all(maps[i].saa is not None for i in order):
        saa = torch.stack([_resize_like(maps[i].saa, hw) for i in order]).mean(dim=0)
    return PredictionMaps(cls=cls, loc=loc, saa=saa)


def pad_to_stride(x, stride=STRIDE):
    """Pad right/bottom with the per-sample channel mean so spatial dims are
    stride multiples."""
    h, w = x.shape[-2:]
    ph = (stride - h % stride) % stride
    pw = (stride - w % stride) % stride
    if ph == 0 and pw == 0:
        return x
    mean = x.mean(dim=(-2, -1), keepdim=True)
    out = mean.expand(*x.shape[:-2], h + ph, w + pw).clone()
    out[..., :h, :w] = x
    return out


def frames_to_batch(frames: list[Frame], dtype=torch.float32):
    """Stack frame pairs into ([N, B, H, W], [N, 3, H, W]) tensors."""
    hs = torch.stack([cube_to_tensor(f.hs) for f in frames]).to(dtype)
    rgb = torch.stack([rgb_to_tensor(f.rgb) for f in frames]).to(dtype)
    return hs, rgb


@dataclass
class PairOutput:
    """Per-stream, per-stage head outputs of one template/search pair."""

    hs: dict[int, PredictionMaps]
    rgb: dict[int, PredictionMaps]
    hs_embeds: dict[int, tuple[torch.Tensor, torch.Tensor]]


class TrackerModel(nn.Module):
    """Bi-stream fusion tracker over aligned HS/RGB crops."""

    def __init__(self, bands: int, cfg: ModelSection | None = None):
        super().__init__()
        cfg = cfg or ModelSection()
        c = cfg.base_channels
        stage_channels = {2: 2 * c, 3: 4 * c, 4: 8 * c}
        self.bands = bands
        self.cfg = cfg
        self.hs = HSBackbone(
            bands, c, blocks_per_stage=cfg.blocks_per_stage,
            spectral_filters=cfg.spectral_filters, norm=cfg.norm, activation=cfg.activation,
        )
        self.rgb = RGBBackbone(
            c, blocks_per_stage=cfg.blocks_per_stage, norm=cfg.norm, activation=cfg.activation
        )
        self.safm = PyramidFusion(stage_channels, kernel_size=cfg.safm_kernel)
        self.head = TrackingHead(
            stage_channels, cfg.head_width, cfg.embed_dim, STRIDE,
            with_saa=True, norm=cfg.norm, activation=cfg.activation,
        )
        self.rgb_head = TrackingHead(
            stage_channels, cfg.head_width, cfg.embed_dim, STRIDE,
            with_saa=False, norm=cfg.norm, activation=cfg.activation,
        )
        self.ensemble = EnsembleWeights()
        self._rgb_frozen = False

    # -- freezing ---------------------------------------------------------

    def freeze_rgb_stream(self, frozen: bool = True):
        """Freeze the visual backbone and head, including BN statistics."""
        self._rgb_frozen = frozen
        for module in (self.rgb, self.rgb_head):
            for p in module.parameters():
                p.requires_grad_(not frozen)
            module.train(self.training and not frozen)
        return self

    def train(self, mode: bool = True):
        super().train(mode)
        if self._rgb_frozen:
            self.rgb.eval()
            self.rgb_head.eval()
        return self

    # -- forward ----------------------------------------------------------

    def embed(self, hs_batch, rgb_batch):
        """Backbone + fusion for one crop batch -> (fused pyramid, rgb
        pyramid, fusion states). Crops are padded to the backbone stride."""
        hs_pyr = self.hs(pad_to_stride(hs_batch))
        rgb_pyr = self.rgb(pad_to_stride(rgb_batch))
        fused, states = self.safm(rgb_pyr, hs_pyr)
        return fused, rgb_pyr, states

    def forward_pair(self, template, search) -> PairOutput:
        """Full forward of (hs_z, rgb_z) templates against (hs_x, rgb_x)
        search crops; each argument is a (hs, rgb) tensor pair."""
        zf, zr, _ = self.embed(*template)
        xf, xr, _ = self.embed(*search)
        return self.predict(zf, zr, xf, xr)

    def predict(self, z_fused: FeaturePyramid, z_rgb: FeaturePyramid,
                x_fused: FeaturePyramid, x_rgb: FeaturePyramid) -> PairOutput:
        hs_maps, hs_embeds = self.head(z_fused, x_fused, stages=HEAD_STAGES)
        rgb_maps, _ = self.rgb_head(z_rgb, x_rgb, stages=HEAD_STAGES)
        return PairOutput(hs=hs_maps, rgb=rgb_maps, hs_embeds=hs_embeds)

    def forward(self, template, search) -> PairOutput:
        return self.forward_pair(template, search)


def normalize01(t, eps=1e-12):
    """Min-max normalize to [0, 1]; a constant map becomes all ones."""
    mn, mx = t.min(), t.max()
    if float(mx - mn) < eps:
        return torch.ones_like(t)
    return (t - mn) / (mx - mn)


def response_from_maps(maps: PredictionMaps):
    """Position response: foreground probability gated by the normalized
    spectral-angle map (all ones when no SAA map is present)."""
    fg = torch.softmax(maps.cls, dim=-3).select(-3, 1)
    if maps.saa is None:
        return fg
    return fg * normalize01(maps.saa.select(-3, 0))


def cosine_window(hw: tuple[int, int], dtype=torch.float32):
    """Outer product of Hann windows, for the optional motion prior."""
    h, w = hw
    wy = torch.hann_window(h, periodic=False, dtype=dtype)
    wx = torch.hann_window(w, periodic=False, dtype=dtype)
    return torch.outer(wy, wx)


def peak_location(response) -> tuple[int, int]:
    """Argmax of a [h, w] response; ties break toward the map center."""
    m = response.max()
    cand = (response == m).nonzero(as_tuple=False)
    cy, cx = (response.shape[0] - 1) / 2.0, (response.shape[1] - 1) / 2.0
    d2 = (cand[:, 0].double() - cy) ** 2 + (cand[:, 1].double() - cx) ** 2
    best = cand[int(torch.argmin(d2))]
    return int(best[0]), int(best[1])
