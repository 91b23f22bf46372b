"""Frame-by-frame tracking and the training loop.

Tracking keeps the first-frame template features fixed, crops a search
region around the previous state each frame, and reads the box off the
ensembled prediction maps at the response peak. Training samples
template/search pairs from annotated sequences and optimizes the joint
objective with warmed-up SGD.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .config import Config
from .data import BoundingBox, Frame, Sequence, crop_search, crop_template
from .heads import cosine_similarity_map, map_points
from .losses import (LossParts, LossWeights, assign_regions, cls_loss,
                     loc_loss, saal, total_loss)
from .model import (STRIDE, PairOutput, TrackerModel, aggregate_stages,
                    cosine_window, ensemble, frames_to_batch, normalize01,
                    peak_location, response_from_maps)

LOG_HEADER = "step,L_CLS,L_LOC,L_SAAL,total"


class NumericalError(RuntimeError):
    """Non-finite values where finite ones are required."""


@dataclass
class TrackState:
    """Current tracker belief: center/size in frame pixels."""

    center: tuple[float, float]
    size: tuple[float, float]
    lost: bool = False


def box_to_map_coords(box: BoundingBox, map_hw, stride, search_size) -> BoundingBox:
    """Search-crop pixel box -> response-map coordinate box."""
    pts = map_points(map_hw, stride, search_size)
    ox = float(pts[0, 0, 0])
    oy = float(pts[0, 0, 1])
    return BoundingBox(
        (box.x - ox) / stride, (box.y - oy) / stride, box.w / stride, box.h / stride
    )


class Tracker:
    """Single-object tracker around a trained model."""

    def __init__(self, model: TrackerModel, cfg: Config):
        self.model = model.eval()
        self.cfg = cfg
        self.state: TrackState | None = None
        self._z_fused = None
        self._z_rgb = None
        self._frame_hw: tuple[int, int] | None = None
        self._window = None

    @torch.no_grad()
    def init(self, frame: Frame, box: BoundingBox) -> None:
        """Set the template from the first frame's annotation."""
        d = self.cfg.data
        template = crop_template(frame, box, d.template_size, d.context)
        hs, rgb = frames_to_batch([template])
        self._z_fused, self._z_rgb, _ = self.model.embed(hs, rgb)
        self._frame_hw = frame.hs.shape[:2]
        self.state = TrackState(center=box.center, size=(box.w, box.h))

    @torch.no_grad()
    def track(self, frame: Frame) -> tuple[BoundingBox, dict]:
        """Advance one frame; returns the predicted box and diagnostics."""
        if self.state is None:
            raise RuntimeError("tracker not initialized; call init() first")
        d, k = self.cfg.data, self.cfg.track
        search, meta = crop_search(
            frame, self.state.center, self.state.size,
            d.search_size, d.template_size, d.context,
        )
        hs, rgb = frames_to_batch([search])
        x_fused, x_rgb, _ = self.model.embed(hs, rgb)
        out = self.model.predict(self._z_fused, self._z_rgb, x_fused, x_rgb)
        agg_hs = aggregate_stages(out.hs)
        agg_rgb = aggregate_stages(out.rgb)
        ens = ensemble(agg_hs, agg_rgb, self.model.ensemble)

        response = response_from_maps(ens)[0]
        hs_response = response_from_maps(agg_hs)[0]
        if k.window:
            if self._window is None or self._window.shape != response.shape:
                self._window = cosine_window(tuple(response.shape), dtype=response.dtype)
            response = response * (1 - k.window_influence) + self._window * k.window_influence

        info = {
            "meta": meta,
            "response": response.numpy(),
            "hs_response": hs_response.numpy(),
            "map_hw": tuple(response.shape),
            "lost": False,
        }
        if float(response.abs().max()) == 0.0:
            self.state.lost = True
            info["lost"] = True
            box = BoundingBox.from_center(*self.state.center, *self.state.size)
            return box, info

        r, c = peak_location(response)
        pts = map_points(tuple(response.shape), STRIDE, d.search_size)
        px, py = float(pts[r, c, 0]), float(pts[r, c, 1])
        l, t, rr, b = (float(v) for v in ens.loc[0, :, r, c])
        x1, y1, x2, y2 = px - l, py - t, px + rr, py + b
        crop_box = BoundingBox(x1, y1, max(x2 - x1, 1e-3), max(y2 - y1, 1e-3))
        frame_box = meta.box_to_frame(crop_box)

        fh, fw = self._frame_hw
        cx = min(max(frame_box.center[0], 0.0), fw - 1.0)
        cy = min(max(frame_box.center[1], 0.0), fh - 1.0)
        ema = k.size_ema
        w = (1 - ema) * self.state.size[0] + ema * frame_box.w
        h = (1 - ema) * self.state.size[1] + ema * frame_box.h
        w = min(max(w, 2.0), float(fw))
        h = min(max(h, 2.0), float(fh))
        self.state = TrackState(center=(cx, cy), size=(w, h))
        info["peak"] = (r, c)
        info["peak_value"] = float(response[r, c])
        return BoundingBox.from_center(cx, cy, w, h), info


def track_sequence(model: TrackerModel, seq: Sequence, cfg: Config):
    """Track a full sequence from its first annotation; returns one box per
    frame (first one echoes the ground truth) and per-frame diagnostics."""
    first = seq.annotations[0]
    if first is None:
        raise ValueError(f"sequence '{seq.name}' has no first-frame annotation")
    tracker = Tracker(model, cfg)
    tracker.init(seq.frames[0], first)
    boxes = [first]
    infos = [None]
    for frame in seq.frames[1:]:
        box, info = tracker.track(frame)
        boxes.append(box)
        infos.append(info)
    return boxes, infos


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class TrainSample:
    """One template/search crop pair with the target in search-crop pixels."""

    template: Frame
    search: Frame
    gt_box: BoundingBox


def sample_training_pair(seq: Sequence, rng: np.random.Generator, cfg: Config) -> TrainSample:
    """Draw a template frame and a nearby search frame, jitter the search
    crop in translation and scale, and map the target into crop pixels."""
    d, t = cfg.data, cfg.train
    valid = [i for i, a in enumerate(seq.annotations) if a is not None]
    if not valid:
        raise ValueError(f"sequence '{seq.name}' has no usable annotations")
    i = int(rng.choice(valid))
    near = [j for j in valid if abs(j - i) <= t.max_frame_gap]
    j = int(rng.choice(near))
    box_i, box_j = seq.annotations[i], seq.annotations[j]

    template = crop_template(seq.frames[i], box_i, d.template_size, d.context)
    shift = rng.uniform(-t.jitter_translation, t.jitter_translation, size=2)
    scale = 1.0 + rng.uniform(-t.jitter_scale, t.jitter_scale)
    center = (box_j.center[0] + shift[0], box_j.center[1] + shift[1])
    size = (box_j.w * scale, box_j.h * scale)
    search, meta = crop_search(
        seq.frames[j], center, size, d.search_size, d.template_size, d.context
    )
    return TrainSample(template=template, search=search, gt_box=meta.box_to_crop(box_j))


def compute_pair_losses(out: PairOutput, gt_boxes: list[BoundingBox], cfg: Config,
                        include_rgb: bool) -> LossParts:
    """Joint loss over a batch: CLS/LOC on the stage-aggregated maps, the
    similarity-separation term on per-stage embedding cosines."""
    search_size = cfg.data.search_size
    agg_hs = aggregate_stages(out.hs)
    agg_rgb = aggregate_stages(out.rgb) if include_rgb else None
    map_hw = agg_hs.map_hw()
    pts = map_points(map_hw, STRIDE, search_size)

    cls_terms, loc_terms, saal_terms = [], [], []
    for n, gt in enumerate(gt_boxes):
        labels = assign_regions(box_to_map_coords(gt, map_hw, STRIDE, search_size), map_hw)
        cls_terms.append(cls_loss(agg_hs.cls[n], labels))
        loc_terms.append(loc_loss(agg_hs.loc[n], gt, labels, pts))
        if agg_rgb is not None:
            cls_terms.append(cls_loss(agg_rgb.cls[n], labels))
            loc_terms.append(loc_loss(agg_rgb.loc[n], gt, labels, pts))
        for stage, (z_emb, x_emb) in out.hs_embeds.items():
            cos = cosine_similarity_map(z_emb[n], x_emb[n])
            stage_hw = tuple(cos.shape)
            stage_labels = assign_regions(
                box_to_map_coords(gt, stage_hw, STRIDE, search_size), stage_hw
            )
            sim_pos = cos[stage_labels.pos_set[:, 0], stage_labels.pos_set[:, 1]]
            sim_neg = cos[stage_labels.neg_set[:, 0], stage_labels.neg_set[:, 1]]
            term, _ = saal(sim_pos, sim_neg)
            saal_terms.append(term)
    zero = agg_hs.cls.sum() * 0.0
    return LossParts(
        cls=torch.stack(cls_terms).mean() if cls_terms else zero,
        loc=torch.stack(loc_terms).mean() if loc_terms else zero,
        saal=torch.stack(saal_terms).mean() if saal_terms else zero,
    )


def build_optimizer(model: TrackerModel, cfg: Config) -> torch.optim.SGD:
    """SGD with momentum/weight decay; the ensemble scalars skip decay."""
    t = cfg.train
    ens_params = list(model.ensemble.parameters())
    ens_ids = {id(p) for p in ens_params}
    main = [p for p in model.parameters() if id(p) not in ens_ids]
    return torch.optim.SGD(
        [
            {"params": main, "weight_decay": t.weight_decay},
            {"params": ens_params, "weight_decay": 0.0},
        ],
        lr=t.lr,
        momentum=t.momentum,
    )


def warmup_lr(base_lr: float, step: int, warmup_steps: int) -> float:
    """Linear ramp to the base rate over the first warmup steps."""
    if warmup_steps <= 0:
        return base_lr
    return base_lr * min(1.0, (step + 1) / warmup_steps)


def train_step(model: TrackerModel, optimizer, batch: list[TrainSample],
               cfg: Config, step: int = 0):
    """One optimization step; returns the detached loss parts and total."""
    model.train()
    t = cfg.train
    lr = warmup_lr(t.lr, step, t.warmup_steps)
    for group in optimizer.param_groups:
        group["lr"] = lr

    z = frames_to_batch([s.template for s in batch])
    x = frames_to_batch([s.search for s in batch])
    out = model.forward_pair(z, x)
    parts = compute_pair_losses(
        out, [s.gt_box for s in batch], cfg, include_rgb=not model._rgb_frozen
    )
    weights = LossWeights(alpha=t.alpha, beta=t.beta, gamma=t.gamma)
    loss = total_loss(parts, weights)
    if not torch.isfinite(loss):
        raise NumericalError(f"non-finite training loss at step {step}: {loss}")

    optimizer.zero_grad(set_to_none=True)
    if loss.requires_grad:
        loss.backward()
        optimizer.step()
    return parts.detached(), float(loss.detach())


class Trainer:
    """Seeded training driver writing the per-step loss log."""

    def __init__(self, model: TrackerModel, sequences: list[Sequence], cfg: Config):
        if not sequences:
            raise ValueError("no training sequences")
        self.model = model
        self.sequences = sequences
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        if cfg.train.freeze_rgb:
            model.freeze_rgb_stream(True)
        self.optimizer = build_optimizer(model, cfg)
        self.history: list[tuple[int, tuple[float, float, float], float]] = []

    def sample_batch(self) -> list[TrainSample]:
        picks = self.rng.integers(0, len(self.sequences), size=self.cfg.train.batch_size)
        return [sample_training_pair(self.sequences[k], self.rng, self.cfg) for k in picks]

    def run(self, steps: int | None = None, log_path: str | Path | None = None):
        steps = self.cfg.train.steps if steps is None else steps
        log_fh = None
        if log_path is not None:
            Path(log_path).parent.mkdir(parents=True, exist_ok=True)
            log_fh = open(log_path, "w")
            log_fh.write(LOG_HEADER + "\n")
        try:
            for step in range(steps):
                parts, total = train_step(
                    self.model, self.optimizer, self.sample_batch(), self.cfg, step
                )
                self.history.append((step, parts, total))
                if log_fh is not None:
                    log_fh.write(
                        f"{step},{parts[0]:.6f},{parts[1]:.6f},{parts[2]:.6f},{total:.6f}\n"
                    )
        finally:
            if log_fh is not None:
                log_fh.close()
        return self.history
