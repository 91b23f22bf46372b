"""Hyperspectral sequence data types, disk I/O, synthetic sequences, and crops.

Conventions:
  - image arrays are numpy float32, channels-last ([H, W, B] cubes, [H, W, 3] RGB)
  - bounding boxes are top-left (x, y, w, h) in pixels
  - a sequence directory holds ``NNNN.npy`` cube frames, ``groundtruth_rect.txt``
    (one "x,y,w,h" line per frame, comma or tab separated), an optional
    ``attributes.txt`` tag list, an optional ``rgb/NNNN.npy`` paired-RGB set,
    and an optional ``meta.json``
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np


class DataError(RuntimeError):
    """Malformed or inconsistent on-disk sequence data."""


@dataclass(frozen=True)
class HSCube:
    """A single hyperspectral frame, [H, W, B] reflectance-like values."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 3:
            raise ValueError(f"cube must be [H, W, B], got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1 or arr.shape[2] < 1:
            raise ValueError(f"cube dims must be >= 1, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("cube contains non-finite values")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def band_count(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass(frozen=True)
class RGBImage:
    """A visual frame, [H, W, 3] with values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"rgb image must be [H, W, 3], got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("rgb image contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("rgb values must lie in [0, 1]")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box, top-left convention, pixel units."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.w, self.h)):
            raise ValueError("box fields must be finite")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box must have positive size, got w={self.w}, h={self.h}")

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @staticmethod
    def from_center(cx: float, cy: float, w: float, h: float) -> "BoundingBox":
        return BoundingBox(cx - w / 2.0, cy - h / 2.0, w, h)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)


class Frame(NamedTuple):
    """One aligned (cube, visual) frame pair."""

    hs: HSCube
    rgb: RGBImage


@dataclass
class Sequence:
    """An annotated tracking sequence of aligned HS/RGB frames."""

    name: str
    frames: list[Frame]
    annotations: list[BoundingBox | None]
    attributes: set[str] = field(default_factory=set)
    meta: dict = field(default_factory=dict)
    rgb_is_derived: bool = True

    def __post_init__(self):
        if len(self.frames) != len(self.annotations):
            raise DataError(
                f"sequence '{self.name}': {len(self.frames)} frames vs "
                f"{len(self.annotations)} annotations"
            )
        if not self.frames:
            raise DataError(f"sequence '{self.name}' is empty")
        h, w, b = self.frames[0].hs.shape
        for i, fr in enumerate(self.frames):
            if fr.hs.shape != (h, w, b):
                raise DataError(
                    f"sequence '{self.name}': frame {i} shape {fr.hs.shape} "
                    f"!= {(h, w, b)}"
                )
            if fr.rgb.shape[:2] != (h, w):
                raise DataError(
                    f"sequence '{self.name}': frame {i} rgb dims {fr.rgb.shape[:2]} "
                    f"do not match cube dims {(h, w)}"
                )

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def band_count(self) -> int:
        return self.frames[0].hs.band_count

    @property
    def frame_shape(self) -> tuple[int, int]:
        return self.frames[0].hs.shape[:2]

    def equals(self, other: "Sequence") -> bool:
        """Exact content equality (frame data, annotations, tags, meta)."""
        if len(self) != len(other) or self.attributes != other.attributes:
            return False
        if self.meta != other.meta:
            return False
        for fa, fb in zip(self.frames, other.frames):
            if not np.array_equal(fa.hs.data, fb.hs.data):
                return False
            if not np.array_equal(fa.rgb.data, fb.rgb.data):
                return False
        for aa, ab in zip(self.annotations, other.annotations):
            if (aa is None) != (ab is None):
                return False
            if aa is not None and aa.as_tuple() != ab.as_tuple():
                return False
        return True


def rgb_band_triplet(band_count: int) -> tuple[int, int, int]:
    """Three evenly spaced band indices used to derive a false-color image."""
    idx = np.round(np.linspace(0, band_count - 1, 3)).astype(int)
    return (int(idx[0]), int(idx[1]), int(idx[2]))


def rgb_from_cube(cube: HSCube) -> RGBImage:
    """Derive a false-color RGB leg from a cube.

    Picks three evenly spaced bands and min-max normalizes each channel over
    the whole frame; a constant channel maps to zeros.
    """
    bands = rgb_band_triplet(cube.band_count)
    raw = cube.data[:, :, list(bands)]
    out = np.zeros_like(raw)
    for c in range(3):
        ch = raw[:, :, c]
        lo, hi = float(ch.min()), float(ch.max())
        if hi > lo:
            out[:, :, c] = (ch - lo) / (hi - lo)
    return RGBImage(np.clip(out, 0.0, 1.0))


# ---------------------------------------------------------------------------
# Disk format
# ---------------------------------------------------------------------------

_ANNOT_SPLIT = re.compile(r"[,\t]")


def _parse_annotation_line(line: str, lineno: int) -> BoundingBox | None:
    parts = [p for p in _ANNOT_SPLIT.split(line.strip()) if p != ""]
    if len(parts) != 4:
        raise DataError(f"annotation line {lineno}: expected 4 fields, got {len(parts)}")
    try:
        x, y, w, h = (float(p) for p in parts)
    except ValueError as exc:
        raise DataError(f"annotation line {lineno}: {exc}") from exc
    if not all(math.isfinite(v) for v in (x, y, w, h)) or w <= 0 or h <= 0:
        return None  # absent/degenerate ground truth for this frame
    return BoundingBox(x, y, w, h)


def _format_number(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def load_sequence(dir_path: str | Path) -> Sequence:
    """Load one sequence directory.

    The RGB leg is read from ``rgb/`` when present, otherwise derived from the
    cube by fixed band-triplet projection.
    """
    root = Path(dir_path)
    if not root.is_dir():
        raise DataError(f"sequence directory not found: {root}")
    frame_files = sorted(p for p in root.glob("*.npy"))
    if not frame_files:
        raise DataError(f"no frame files (*.npy) in {root}")
    annot_file = root / "groundtruth_rect.txt"
    if not annot_file.is_file():
        raise DataError(f"missing annotation file: {annot_file}")
    lines = [ln for ln in annot_file.read_text().splitlines() if ln.strip()]
    if len(lines) != len(frame_files):
        raise DataError(
            f"{root.name}: {len(frame_files)} frames but {len(lines)} annotation lines"
        )
    annotations = [_parse_annotation_line(ln, i + 1) for i, ln in enumerate(lines)]

    rgb_dir = root / "rgb"
    has_rgb = rgb_dir.is_dir()
    frames: list[Frame] = []
    band_count = None
    for f in frame_files:
        arr = np.load(f)
        if arr.ndim != 3:
            raise DataError(f"{f.name}: expected [H, W, B] array, got shape {arr.shape}")
        if band_count is None:
            band_count = arr.shape[2]
        elif arr.shape[2] != band_count:
            raise DataError(
                f"{f.name}: band count {arr.shape[2]} differs from first frame's {band_count}"
            )
        cube = HSCube(arr)
        if has_rgb:
            rgb_path = rgb_dir / f.name
            if not rgb_path.is_file():
                raise DataError(f"missing paired RGB frame: {rgb_path}")
            rgb = RGBImage(np.load(rgb_path))
        else:
            rgb = rgb_from_cube(cube)
        frames.append(Frame(cube, rgb))

    attributes: set[str] = set()
    attr_file = root / "attributes.txt"
    if attr_file.is_file():
        attributes = {ln.strip() for ln in attr_file.read_text().splitlines() if ln.strip()}
    meta: dict = {}
    meta_file = root / "meta.json"
    if meta_file.is_file():
        meta = json.loads(meta_file.read_text())
    return Sequence(
        name=root.name,
        frames=frames,
        annotations=annotations,
        attributes=attributes,
        meta=meta,
        rgb_is_derived=not has_rgb,
    )


def save_sequence(seq: Sequence, dir_path: str | Path) -> Path:
    """Write a sequence in the documented directory format."""
    root = Path(dir_path)
    root.mkdir(parents=True, exist_ok=True)
    for i, fr in enumerate(seq.frames):
        np.save(root / f"{i + 1:04d}.npy", fr.hs.data)
    if not seq.rgb_is_derived:
        rgb_dir = root / "rgb"
        rgb_dir.mkdir(exist_ok=True)
        for i, fr in enumerate(seq.frames):
            np.save(rgb_dir / f"{i + 1:04d}.npy", fr.rgb.data)
    with open(root / "groundtruth_rect.txt", "w") as fh:
        for box in seq.annotations:
            if box is None:
                fh.write("0,0,0,0\n")
            else:
                fh.write(",".join(_format_number(v) for v in box.as_tuple()) + "\n")
    if seq.attributes:
        (root / "attributes.txt").write_text("\n".join(sorted(seq.attributes)) + "\n")
    if seq.meta:
        (root / "meta.json").write_text(json.dumps(seq.meta, indent=1))
    return root


def list_sequences(dataset_dir: str | Path) -> list[Path]:
    """Sequence directories under a dataset root, sorted by name."""
    root = Path(dataset_dir)
    if not root.is_dir():
        raise DataError(f"dataset directory not found: {root}")
    dirs = sorted(p for p in root.iterdir() if p.is_dir() and any(p.glob("*.npy")))
    if not dirs:
        raise DataError(f"no sequence directories under {root}")
    return dirs


# ---------------------------------------------------------------------------
# Synthetic sequences
# ---------------------------------------------------------------------------


@dataclass
class SynthConfig:
    """Parameters of the deterministic synthetic-sequence generator."""

    frames: int = 20
    height: int = 64
    width: int = 64
    bands: int = 16
    object_size: tuple[int, int] = (12, 12)  # (w, h)
    object_signature: list[float] | None = None
    background_signatures: list[list[float]] | None = None
    motion: str = "linear"  # "linear" | "static"
    velocity: tuple[float, float] = (1.5, 0.6)
    noise: float = 0.0
    seed: int = 0
    distractor: bool = False
    distractor_offset: tuple[int, int] = (0, 16)  # (dx, dy) from the object
    name: str = "synth"


def _default_object_signature(bands: int) -> np.ndarray:
    b = np.arange(bands, dtype=np.float64)
    return 0.25 + 0.65 * np.exp(-(((b - 0.30 * bands) / (0.15 * bands + 1e-9)) ** 2))


def _default_background_signature(bands: int) -> np.ndarray:
    b = np.arange(bands, dtype=np.float64)
    return 0.35 + 0.10 * np.sin(2.0 * np.pi * b / max(bands, 1))


def _distractor_signature(object_sig: np.ndarray, bands: int) -> np.ndarray:
    # Identical at the false-color triplet bands, different elsewhere: the
    # distractor projects to the same RGB patch but carries another spectrum.
    b = np.arange(bands, dtype=np.float64)
    alt = 0.25 + 0.65 * np.exp(-(((b - 0.75 * bands) / (0.12 * bands + 1e-9)) ** 2))
    sig = alt.copy()
    for idx in rgb_band_triplet(bands):
        sig[idx] = object_sig[idx]
    return sig


def synth_sequence(cfg: SynthConfig) -> Sequence:
    """Generate a seeded synthetic sequence with exact annotations.

    The object is a rectangle carrying a distinct spectral signature over a
    smooth background. With ``distractor=True`` a second rectangle moves at a
    fixed offset from the object; it shares the object's false-color
    projection while differing spectrally. Distractor boxes are recorded in
    ``meta["distractor_boxes"]``.
    """
    w_obj, h_obj = cfg.object_size
    if w_obj > cfg.width or h_obj > cfg.height:
        raise ValueError(
            f"object {cfg.object_size} larger than frame {(cfg.width, cfg.height)}"
        )
    if cfg.motion not in ("linear", "static"):
        raise ValueError(f"unknown motion model: {cfg.motion!r}")
    rng = np.random.default_rng(cfg.seed)

    obj_sig = (
        np.asarray(cfg.object_signature, dtype=np.float64)
        if cfg.object_signature is not None
        else _default_object_signature(cfg.bands)
    )
    if obj_sig.shape != (cfg.bands,):
        raise ValueError(f"object signature must have {cfg.bands} entries")
    if cfg.background_signatures:
        bg_sigs = [np.asarray(s, dtype=np.float64) for s in cfg.background_signatures]
        for s in bg_sigs:
            if s.shape != (cfg.bands,):
                raise ValueError(f"background signatures must have {cfg.bands} entries")
    else:
        bg_sigs = [_default_background_signature(cfg.bands)]
    dis_sig = _distractor_signature(obj_sig, cfg.bands)

    # Background: rows interpolate between the provided signatures.
    rows = np.linspace(0.0, 1.0, cfg.height)
    if len(bg_sigs) == 1:
        background = np.tile(bg_sigs[0], (cfg.height, cfg.width, 1))
    else:
        stops = np.linspace(0.0, 1.0, len(bg_sigs))
        row_sig = np.stack(
            [np.interp(rows, stops, [s[b] for s in bg_sigs]) for b in range(cfg.bands)],
            axis=1,
        )
        background = np.repeat(row_sig[:, None, :], cfg.width, axis=1)

    dx_off, dy_off = cfg.distractor_offset
    margin = 2
    x_lo, x_hi = margin, cfg.width - w_obj - margin
    y_lo, y_hi = margin, cfg.height - h_obj - margin
    if cfg.distractor:
        # keep the offset companion inside the frame along the shared path
        x_lo, x_hi = x_lo + max(0, -dx_off), x_hi - max(0, dx_off)
        y_lo, y_hi = y_lo + max(0, -dy_off), y_hi - max(0, dy_off)
    if x_hi < x_lo or y_hi < y_lo:
        raise ValueError("frame too small for the object/distractor layout")

    pos = np.array([x_lo + 0.25 * (x_hi - x_lo), y_lo + 0.25 * (y_hi - y_lo)])
    vel = np.array(cfg.velocity, dtype=np.float64)
    if cfg.motion == "static":
        vel = np.zeros(2)

    frames: list[Frame] = []
    annotations: list[BoundingBox | None] = []
    distractor_boxes: list[list[float]] = []
    for _ in range(cfg.frames):
        x, y = int(round(pos[0])), int(round(pos[1]))
        cube = background.copy()
        cube[y : y + h_obj, x : x + w_obj, :] = obj_sig
        if cfg.distractor:
            xd, yd = x + dx_off, y + dy_off
            cube[yd : yd + h_obj, xd : xd + w_obj, :] = dis_sig
            distractor_boxes.append([float(xd), float(yd), float(w_obj), float(h_obj)])
        if cfg.noise > 0:
            cube = cube + rng.normal(0.0, cfg.noise, cube.shape)
        hs = HSCube(cube.astype(np.float32))
        frames.append(Frame(hs, rgb_from_cube(hs)))
        annotations.append(BoundingBox(float(x), float(y), float(w_obj), float(h_obj)))
        # bounce off the allowed region's borders
        pos = pos + vel
        for k, (lo, hi) in enumerate(((x_lo, x_hi), (y_lo, y_hi))):
            if pos[k] < lo:
                pos[k] = 2 * lo - pos[k]
                vel[k] = -vel[k]
            elif pos[k] > hi:
                pos[k] = 2 * hi - pos[k]
                vel[k] = -vel[k]

    meta = {"distractor_boxes": distractor_boxes} if cfg.distractor else {}
    return Sequence(
        name=cfg.name,
        frames=frames,
        annotations=annotations,
        attributes={"SYN"},
        meta=meta,
    )


# ---------------------------------------------------------------------------
# Template / search cropping
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CropMeta:
    """Exact mapping between frame coordinates and a square resized crop."""

    x0: int
    y0: int
    side: int
    out_size: int

    @property
    def scale(self) -> float:
        return self.out_size / self.side

    def point_to_crop(self, x: float, y: float) -> tuple[float, float]:
        return ((x - self.x0) * self.scale, (y - self.y0) * self.scale)

    def point_to_frame(self, x: float, y: float) -> tuple[float, float]:
        return (self.x0 + x / self.scale, self.y0 + y / self.scale)

    def box_to_crop(self, box: BoundingBox) -> BoundingBox:
        x, y = self.point_to_crop(box.x, box.y)
        return BoundingBox(x, y, box.w * self.scale, box.h * self.scale)

    def box_to_frame(self, box: BoundingBox) -> BoundingBox:
        x, y = self.point_to_frame(box.x, box.y)
        return BoundingBox(x, y, box.w / self.scale, box.h / self.scale)


def context_side(size: tuple[float, float], context: float) -> float:
    """Square crop side around an object with a proportional context margin."""
    w, h = size
    pad = context * (w + h)
    return math.sqrt((w + pad) * (h + pad))


def _extract_square(img: np.ndarray, cx: float, cy: float, side: int) -> tuple[np.ndarray, int, int]:
    """Square subarray centered at (cx, cy), out-of-bounds filled per-channel mean."""
    h, w = img.shape[:2]
    x0 = int(round(cx - side / 2.0))
    y0 = int(round(cy - side / 2.0))
    mean = img.reshape(-1, img.shape[2]).mean(axis=0)
    patch = np.empty((side, side, img.shape[2]), dtype=img.dtype)
    patch[:] = mean
    xa, xb = max(0, x0), min(w, x0 + side)
    ya, yb = max(0, y0), min(h, y0 + side)
    if xa < xb and ya < yb:
        patch[ya - y0 : yb - y0, xa - x0 : xb - x0] = img[ya:yb, xa:xb]
    return patch, x0, y0


def _resize(img: np.ndarray, out_size: int) -> np.ndarray:
    if img.shape[0] == out_size:
        return img.copy()
    import torch
    import torch.nn.functional as F

    t = torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1)))[None].float()
    r = F.interpolate(t, size=(out_size, out_size), mode="bilinear", align_corners=False)
    return r[0].numpy().transpose(1, 2, 0).astype(img.dtype)


def crop_square(frame: Frame, center: tuple[float, float], side: float, out_size: int) -> tuple[Frame, CropMeta]:
    """Crop both legs of a frame to a square resized patch, with its mapping."""
    side_i = max(1, int(round(side)))
    cx, cy = center
    hs_patch, x0, y0 = _extract_square(frame.hs.data, cx, cy, side_i)
    rgb_patch, _, _ = _extract_square(frame.rgb.data, cx, cy, side_i)
    hs_out = _resize(hs_patch, out_size)
    rgb_out = np.clip(_resize(rgb_patch, out_size), 0.0, 1.0)
    meta = CropMeta(x0=x0, y0=y0, side=side_i, out_size=out_size)
    return Frame(HSCube(hs_out), RGBImage(rgb_out)), meta


def crop_template(
    frame: Frame,
    box: BoundingBox,
    out_size: int = 127,
    context: float = 0.5,
) -> Frame:
    """Object-centered template crop with context margin."""
    side = context_side((box.w, box.h), context)
    crop, _ = crop_square(frame, box.center, side, out_size)
    return crop


def crop_search(
    frame: Frame,
    prev_center: tuple[float, float],
    prev_size: tuple[float, float],
    out_size: int = 255,
    template_size: int = 127,
    context: float = 0.5,
) -> tuple[Frame, CropMeta]:
    """Search-region crop around the previous object state.

    The region side scales the template side by ``out_size / template_size``
    so the object appears at template scale inside the search crop.
    """
    if prev_size[0] <= 0 or prev_size[1] <= 0:
        raise ValueError(f"degenerate previous size: {prev_size}")
    side_z = context_side(prev_size, context)
    side_x = side_z * out_size / template_size
    return crop_square(frame, prev_center, side_x, out_size)
