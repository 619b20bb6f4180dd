"""Score a prediction manifest against a ground-truth manifest."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .imageio import read_mask
from .metrics import (Detection, GroundTruth, match_detections, match_max_iou,
                      mean_average_precision, state_match_rate)
from .pipeline import DatasetManifest


class EvaluationError(ValueError):
    pass


def _mask(rec, base: Path):
    return None if rec.instance_mask is None else read_mask(base / rec.instance_mask)


def _records(manifest: DatasetManifest, base: Path, predictions: bool):
    out = []
    for rec in manifest.samples:
        common = dict(bbox=tuple(rec.bbox), mask=_mask(rec, base), state=tuple(rec.state),
                      image=rec.image, category=rec.category)
        if predictions:
            conf = 1.0 if rec.confidence is None else float(rec.confidence)
            out.append(Detection(confidence=conf, **common))
        else:
            out.append(GroundTruth(**common))
    return out


def evaluate_manifests(gt: DatasetManifest, gt_dir, pred: DatasetManifest, pred_dir,
                       iou_threshold: float = 0.5) -> dict:
    """Metric name -> value (None where a metric does not apply)."""
    if gt.taxonomy_version != pred.taxonomy_version:
        raise EvaluationError(f"taxonomy versions differ: {gt.taxonomy_version!r} vs "
                              f"{pred.taxonomy_version!r}")
    gts = _records(gt, Path(gt_dir), predictions=False)
    dets = _records(pred, Path(pred_dir), predictions=True)
    with_masks = all(x.mask is not None for x in gts + dets)
    report = {
        "num_gt": len(gts),
        "num_pred": len(dets),
        "iou_threshold": iou_threshold,
        "box_mAP": mean_average_precision(gts, dets, iou_threshold, "bbox"),
        "mask_mAP": mean_average_precision(gts, dets, iou_threshold, "mask") if with_masks else None,
        "box_mean_max_iou": float(np.mean(match_max_iou(gts, dets, "bbox"))) if gts else None,
        "mask_mean_max_iou": (float(np.mean(match_max_iou(gts, dets, "mask")))
                              if gts and with_masks else None),
    }
    pairs = []
    for cat in sorted({g.category for g in gts}):
        g_idx = [i for i, g in enumerate(gts) if g.category == cat]
        d_idx = [i for i, d in enumerate(dets) if d.category == cat]
        _, _, matched = match_detections([gts[i] for i in g_idx], [dets[i] for i in d_idx],
                                         iou_threshold, "bbox")
        pairs += [(g_idx[a], d_idx[b]) for a, b in matched]
    report["matched_pairs"] = len(pairs)
    report["state_match_rate"] = (state_match_rate([gts[a].state for a, _ in pairs],
                                                   [dets[b].state for _, b in pairs])
                                  if pairs else None)
    return report


def format_report(report: dict) -> str:
    lines = []
    for k, v in report.items():
        if v is None:
            v = "n/a"
        elif isinstance(v, float):
            v = f"{v:.6f}"
        lines.append(f"{k:<20} {v}")
    return "\n".join(lines)
