"""Training objectives: ellipse-based region labels, the spectral-angle
similarity loss, balanced cross-entropy, IoU localization loss, and their
weighted sum.

Region labels follow the two-ellipse rule on the response map: inside the
inner ellipse (axes w/4, h/4 around the target center) is positive, outside
the outer ellipse (axes w/2, h/2) is negative, the ring between is ignored.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .data import BoundingBox

POS = 1
IGNORE = 0
NEG = -1

IOU_CLAMP_MIN = 1e-6


@dataclass
class RegionLabels:
    """Per-location assignment on a response map."""

    label: np.ndarray  # [h, w] int8 in {POS, IGNORE, NEG}
    pos_set: np.ndarray  # [K, 2] (row, col) indices
    neg_set: np.ndarray  # [M, 2]
    center_in_map: bool = True

    @property
    def pos_count(self) -> int:
        return len(self.pos_set)

    @property
    def neg_count(self) -> int:
        return len(self.neg_set)


@dataclass
class LossWeights:
    """Trade-off weights of the joint objective."""

    alpha: float = 1.0
    beta: float = 2.0
    gamma: float = 1.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.gamma < 0:
            raise ValueError("loss weights must be non-negative")


def assign_regions(gt_box: BoundingBox, map_shape: tuple[int, int]) -> RegionLabels:
    """Label every map location from the two concentric ellipses.

    ``gt_box`` must already be expressed in output-map coordinates. A target
    center outside the map yields all-negative labels with the
    ``center_in_map`` flag cleared.
    """
    h, w = map_shape
    cx, cy = gt_box.center
    label = np.full((h, w), NEG, dtype=np.int8)
    center_in_map = 0 <= cx <= w - 1 and 0 <= cy <= h - 1
    if center_in_map:
        ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
        a1, b1 = gt_box.w / 4.0, gt_box.h / 4.0
        a2, b2 = gt_box.w / 2.0, gt_box.h / 2.0
        e1 = ((xs - cx) / a1) ** 2 + ((ys - cy) / b1) ** 2
        e2 = ((xs - cx) / a2) ** 2 + ((ys - cy) / b2) ** 2
        label[e2 <= 1.0] = IGNORE
        label[e1 <= 1.0] = POS
    pos_set = np.argwhere(label == POS)
    neg_set = np.argwhere(label == NEG)
    return RegionLabels(label=label, pos_set=pos_set, neg_set=neg_set,
                        center_in_map=center_in_map)


def saal(sim_pos, sim_neg):
    """Similarity-separation loss: mean negative cosine minus mean positive.

    Minimizing it pulls template/positive-region cosines up and
    template/negative-region cosines down. Returns ``(loss, had_pairs)``;
    with an empty positive or negative set the contribution is zero and the
    flag is False.
    """
    sim_pos = torch.as_tensor(sim_pos)
    sim_neg = torch.as_tensor(sim_neg)
    if sim_pos.numel() == 0 or sim_neg.numel() == 0:
        return torch.zeros((), dtype=sim_pos.dtype), False
    return sim_neg.mean() - sim_pos.mean(), True


def cls_loss(m_cls, labels: RegionLabels):
    """Class-balanced softmax cross-entropy over {background, foreground}.

    ``m_cls`` is [2, h, w] logits (channel 0 background, 1 foreground).
    Positive and negative sets are averaged separately and combined with
    equal class weight, so uniform logits score ln 2; ignore locations do
    not contribute.
    """
    if m_cls.dim() != 3 or m_cls.shape[0] != 2:
        raise ValueError(f"expected [2, h, w] logits, got {tuple(m_cls.shape)}")
    log_p = F.log_softmax(m_cls, dim=0)
    total = torch.zeros((), dtype=m_cls.dtype, device=m_cls.device)
    if labels.pos_count:
        idx = torch.as_tensor(labels.pos_set, device=m_cls.device)
        total = total - 0.5 * log_p[1, idx[:, 0], idx[:, 1]].mean()
    if labels.neg_count:
        idx = torch.as_tensor(labels.neg_set, device=m_cls.device)
        total = total - 0.5 * log_p[0, idx[:, 0], idx[:, 1]].mean()
    return total


def boxes_iou_xyxy(a, b):
    """IoU of [..., 4] corner boxes (differentiable)."""
    ix1 = torch.maximum(a[..., 0], b[..., 0])
    iy1 = torch.maximum(a[..., 1], b[..., 1])
    ix2 = torch.minimum(a[..., 2], b[..., 2])
    iy2 = torch.minimum(a[..., 3], b[..., 3])
    iw = torch.clamp(ix2 - ix1, min=0.0)
    ih = torch.clamp(iy2 - iy1, min=0.0)
    inter = iw * ih
    area_a = torch.clamp(a[..., 2] - a[..., 0], min=0.0) * torch.clamp(a[..., 3] - a[..., 1], min=0.0)
    area_b = torch.clamp(b[..., 2] - b[..., 0], min=0.0) * torch.clamp(b[..., 3] - b[..., 1], min=0.0)
    union = area_a + area_b - inter
    return inter / torch.clamp(union, min=1e-12)


def loc_loss(m_loc, gt_box: BoundingBox, labels: RegionLabels, points):
    """Mean -ln IoU between decoded boxes and the target over positive
    locations; IoU is clamped to [1e-6, 1]. ``points`` is the [h, w, 2]
    pixel grid matching ``m_loc`` ([4, h, w], same pixel units)."""
    if labels.pos_count == 0:
        return torch.zeros((), dtype=m_loc.dtype, device=m_loc.device)
    idx = torch.as_tensor(labels.pos_set, device=m_loc.device)
    pts = points.to(m_loc.dtype)[idx[:, 0], idx[:, 1]]  # [K, 2]
    off = m_loc[:, idx[:, 0], idx[:, 1]].T  # [K, 4] (l, t, r, b)
    pred = torch.stack(
        [pts[:, 0] - off[:, 0], pts[:, 1] - off[:, 1],
         pts[:, 0] + off[:, 2], pts[:, 1] + off[:, 3]],
        dim=-1,
    )
    gt = torch.tensor([gt_box.x, gt_box.y, gt_box.x2, gt_box.y2],
                      dtype=m_loc.dtype, device=m_loc.device).expand_as(pred)
    iou = boxes_iou_xyxy(pred, gt).clamp(IOU_CLAMP_MIN, 1.0)
    return -torch.log(iou).mean()


@dataclass
class LossParts:
    """Per-term loss values of one step (tensors or floats)."""

    cls: torch.Tensor
    loc: torch.Tensor
    saal: torch.Tensor

    def detached(self) -> tuple[float, float, float]:
        return tuple(float(torch.as_tensor(v).detach()) for v in (self.cls, self.loc, self.saal))


def total_loss(parts: LossParts, weights: LossWeights):
    """Weighted objective: alpha*cls + beta*loc + gamma*saal."""
    return weights.alpha * parts.cls + weights.beta * parts.loc + weights.gamma * parts.saal
