"""OTB-style evaluation: IoU, success/precision curves, AUC and DP_20,
attribute bucketing, and report files.

Success uses the strict inequality IoU > t over the 21-point threshold grid
0.00..1.00; precision uses center error <= tau over integer pixel thresholds
0..50. Frames without usable ground truth are skipped.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import BoundingBox, DataError, list_sequences, load_sequence

SUCCESS_THRESHOLDS = np.linspace(0.0, 1.0, 21)
PRECISION_THRESHOLDS = np.arange(0, 51, dtype=np.float64)
DP_PIXELS = 20


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes, in [0, 1]."""
    ix = max(0.0, min(a.x2, b.x2) - max(a.x, b.x))
    iy = max(0.0, min(a.y2, b.y2) - max(a.y, b.y))
    inter = ix * iy
    union = a.w * a.h + b.w * b.h - inter
    return inter / union if union > 0 else 0.0


def center_error(a: BoundingBox, b: BoundingBox) -> float:
    """Distance in pixels between box centers."""
    (ax, ay), (bx, by) = a.center, b.center
    return float(np.hypot(ax - bx, ay - by))


def success_auc(ious) -> tuple[np.ndarray, float]:
    """Success curve (fraction of frames with IoU strictly above each
    threshold) and its mean, the AUC."""
    arr = np.asarray(list(ious), dtype=np.float64)
    if arr.size == 0:
        raise ValueError("empty IoU list")
    curve = (arr[None, :] > SUCCESS_THRESHOLDS[:, None]).mean(axis=1)
    return curve, float(curve.mean())


def precision_dp20(center_errs) -> tuple[np.ndarray, float]:
    """Precision curve (fraction with center error <= tau, tau = 0..50 px)
    and its value at 20 px."""
    arr = np.asarray(list(center_errs), dtype=np.float64)
    if arr.size == 0:
        raise ValueError("empty center-error list")
    curve = (arr[None, :] <= PRECISION_THRESHOLDS[:, None]).mean(axis=1)
    return curve, float(curve[DP_PIXELS])


@dataclass
class EvalResult:
    """Per-sequence (or aggregated) tracking quality."""

    per_frame_iou: list[float]
    per_frame_center_err: list[float]
    success_curve: np.ndarray  # [21]
    precision_curve: np.ndarray  # [51]
    auc: float
    dp20: float


def evaluate_sequence(pred_boxes, gt_boxes) -> EvalResult:
    """Score predictions against ground truth; frames whose ground truth is
    absent are skipped."""
    if len(pred_boxes) != len(gt_boxes):
        raise ValueError(
            f"prediction/annotation count mismatch: {len(pred_boxes)} vs {len(gt_boxes)}"
        )
    ious, errs = [], []
    for pred, gt in zip(pred_boxes, gt_boxes):
        if gt is None:
            continue
        ious.append(iou(pred, gt))
        errs.append(center_error(pred, gt))
    if not ious:
        raise ValueError("sequence has no frames with usable ground truth")
    s_curve, auc = success_auc(ious)
    p_curve, dp20 = precision_dp20(errs)
    return EvalResult(
        per_frame_iou=ious,
        per_frame_center_err=errs,
        success_curve=s_curve,
        precision_curve=p_curve,
        auc=auc,
        dp20=dp20,
    )


def _mean_result(results: list[EvalResult]) -> EvalResult:
    s_curve = np.mean([r.success_curve for r in results], axis=0)
    p_curve = np.mean([r.precision_curve for r in results], axis=0)
    return EvalResult(
        per_frame_iou=[v for r in results for v in r.per_frame_iou],
        per_frame_center_err=[v for r in results for v in r.per_frame_center_err],
        success_curve=s_curve,
        precision_curve=p_curve,
        auc=float(s_curve.mean()),
        dp20=float(p_curve[DP_PIXELS]),
    )


def write_result_file(path, boxes) -> None:
    """One ``x,y,w,h`` line per frame, OTB-compatible."""
    lines = [f"{b.x:g},{b.y:g},{b.w:g},{b.h:g}" for b in boxes]
    Path(path).write_text("\n".join(lines) + "\n")


def read_result_file(path) -> list[BoundingBox]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"result file not found: {path}")
    boxes = []
    for i, line in enumerate(path.read_text().splitlines()):
        if not line.strip():
            continue
        parts = [p for p in line.replace("\t", ",").split(",") if p != ""]
        if len(parts) != 4:
            raise DataError(f"{path.name} line {i + 1}: expected 4 fields")
        x, y, w, h = (float(p) for p in parts)
        boxes.append(BoundingBox(x, y, w, h))
    if not boxes:
        raise DataError(f"empty result file: {path}")
    return boxes


@dataclass
class EvalReport:
    """Evaluation over a dataset: per-sequence, overall, and per-attribute."""

    per_sequence: dict[str, EvalResult]
    overall: EvalResult
    attributes: dict[str, EvalResult]


def evaluate(results_dir, dataset_dir, attribute_filter: str | None = None,
             out_dir=None) -> EvalReport:
    """Score every sequence result file against its dataset ground truth.

    Raises on sequences missing from ``results_dir``. With ``out_dir`` set,
    writes ``success_curve.csv``, ``precision_curve.csv``, and
    ``summary.json``.
    """
    results_dir = Path(results_dir)
    per_sequence: dict[str, EvalResult] = {}
    seq_attrs: dict[str, set[str]] = {}
    missing = []
    for seq_dir in list_sequences(dataset_dir):
        seq = load_sequence(seq_dir)
        if attribute_filter is not None and attribute_filter not in seq.attributes:
            continue
        result_file = results_dir / f"{seq.name}.txt"
        if not result_file.is_file():
            missing.append(seq.name)
            continue
        preds = read_result_file(result_file)
        per_sequence[seq.name] = evaluate_sequence(preds, seq.annotations)
        seq_attrs[seq.name] = seq.attributes
    if missing:
        raise DataError(f"missing result files for sequences: {sorted(missing)}")
    if not per_sequence:
        raise DataError("no sequences matched the evaluation request")

    overall = _mean_result(list(per_sequence.values()))
    all_tags = sorted({t for tags in seq_attrs.values() for t in tags})
    attributes = {
        tag: _mean_result([per_sequence[n] for n, tags in seq_attrs.items() if tag in tags])
        for tag in all_tags
    }
    report = EvalReport(per_sequence=per_sequence, overall=overall, attributes=attributes)
    if out_dir is not None:
        _write_report(report, Path(out_dir))
    return report


def _write_report(report: EvalReport, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    names = sorted(report.per_sequence)
    with open(out_dir / "success_curve.csv", "w") as fh:
        fh.write("threshold,overall," + ",".join(names) + "\n")
        for i, t in enumerate(SUCCESS_THRESHOLDS):
            row = [f"{t:.2f}", f"{report.overall.success_curve[i]:.6f}"]
            row += [f"{report.per_sequence[n].success_curve[i]:.6f}" for n in names]
            fh.write(",".join(row) + "\n")
    with open(out_dir / "precision_curve.csv", "w") as fh:
        fh.write("threshold,overall," + ",".join(names) + "\n")
        for i, t in enumerate(PRECISION_THRESHOLDS):
            row = [f"{t:.0f}", f"{report.overall.precision_curve[i]:.6f}"]
            row += [f"{report.per_sequence[n].precision_curve[i]:.6f}" for n in names]
            fh.write(",".join(row) + "\n")
    summary = {
        "auc": report.overall.auc,
        "dp20": report.overall.dp20,
        "sequences": {
            n: {"auc": r.auc, "dp20": r.dp20} for n, r in report.per_sequence.items()
        },
        "attributes": {
            t: {"auc": r.auc, "dp20": r.dp20} for t, r in report.attributes.items()
        },
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=1))
